"""Tabular Q-learning agents with exponentially decaying epsilon-greedy exploration.

A Q-table is a plain ``(n_observations, m)`` float array. The per-step
functions here (:func:`select_action`, :func:`q_update`) are the readable
reference; :func:`run_learning` drives the compiled loop in ``_kernel`` that
implements the same rules for long sessions.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from .environment import (ContextSpec, EconomicParams, ObservationMode, observation_maps,
                          observation_size, profit_matrix)
from .equilibrium import PriceGrid
from .errors import InvalidInputError


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 0.15
    delta: float = 0.95
    beta: float = 4e-6
    window: int = 100_000
    max_periods: int = 10**9

    def __post_init__(self):
        problems = []
        if not 0.0 <= self.alpha <= 1.0:
            problems.append(f"alpha={self.alpha} must lie in [0, 1]")
        if not 0.0 <= self.delta < 1.0:
            problems.append(f"delta={self.delta} must lie in [0, 1)")
        if not self.beta > 0:
            problems.append(f"beta={self.beta} must be positive")
        if self.window < 1:
            problems.append(f"window={self.window} must be at least 1")
        if self.max_periods < 1:
            problems.append(f"max_periods={self.max_periods} must be at least 1")
        if problems:
            raise InvalidInputError("; ".join(problems))


def init_q(grid: PriceGrid, params: EconomicParams, delta: float, player: int,
           mode: ObservationMode = ObservationMode.FULL_MEMORY) -> np.ndarray:
    """Discounted value of each own price against a uniformly randomizing rival.

    Every observation row is the same vector
    ``mean_j profit(a, p_j) / (1 - delta)``.
    """
    if not 0.0 <= delta < 1.0:
        raise InvalidInputError(f"delta must lie in [0, 1), got {delta}")
    rewards = profit_matrix(grid.prices, params)[..., player]
    own_by_rival = rewards if player == 0 else rewards.T
    row = own_by_rival.mean(axis=1) / (1.0 - delta)
    return np.tile(row, (observation_size(mode, grid.m), 1))


def epsilon(t, beta: float):
    if np.any(np.asarray(t) < 0):
        raise InvalidInputError("period must be non-negative")
    return np.exp(-beta * np.asarray(t, dtype=float)) if np.ndim(t) else math.exp(-beta * t)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Argmax action per observation, lowest index on ties."""
    return np.argmax(q, axis=1)


def tied_observations(q: np.ndarray) -> list[int]:
    best = q.max(axis=1, keepdims=True)
    return [int(o) for o in np.flatnonzero((q == best).sum(axis=1) > 1)]


def select_action(q: np.ndarray, obs: int, eps: float, rng) -> tuple[int, bool]:
    """Epsilon-greedy choice; returns ``(action, explored)``.

    ``rng`` only needs a ``random()`` method. Three draws are consumed on every
    call so that the stream stays aligned with the compiled loop.
    """
    u_explore, u_action, u_tie = rng.random(), rng.random(), rng.random()
    m = q.shape[1]
    if u_explore < eps:
        return min(int(u_action * m), m - 1), True
    row = q[obs]
    ties = np.flatnonzero(row == row.max())
    return int(ties[min(int(u_tie * ties.size), ties.size - 1)]), False


def q_update(q: np.ndarray, obs: int, action: int, reward: float, next_obs: int,
             alpha: float, delta: float) -> np.ndarray:
    """In-place Bellman update of a single cell; returns ``q``."""
    target = reward + delta * q[next_obs].max()
    q[obs, action] = (1.0 - alpha) * q[obs, action] + alpha * target
    return q


def check_convergence(changes, window: int) -> bool:
    """True iff no greedy action changed in the last ``window`` periods.

    ``changes`` holds one truthy flag per period (any argmax changed, for
    either player).
    """
    flags = list(changes)
    return len(flags) >= window and not any(flags[-window:])


class ConvergenceTracker:
    """Streaming form of :func:`check_convergence` for a pair of greedy policies."""

    def __init__(self, window: int, *q_tables: np.ndarray):
        self.window = window
        self.greedy = [greedy_policy(q) for q in q_tables]
        self.stable = 0

    def update(self, *rows: tuple[int, np.ndarray]) -> bool:
        """Record one period; ``rows`` are ``(observation, new_q_row)`` per player."""
        changed = False
        for policy, (obs, row) in zip(self.greedy, rows):
            g = int(np.argmax(row))
            if g != policy[obs]:
                policy[obs] = g
                changed = True
        self.stable = 0 if changed else self.stable + 1
        return self.converged

    @property
    def converged(self) -> bool:
        return self.stable >= self.window


def stable_id(text: str) -> int:
    """64-bit integer derived from a string, identical across runs and platforms."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def session_bitgen(seed: int, stream: str, session: int) -> np.random.PCG64:
    """Independent, reproducible raw stream for one session."""
    return np.random.PCG64(np.random.SeedSequence([int(seed), stable_id(stream), int(session)]))


class RawUniforms:
    """Uniform doubles from a PCG64 raw stream, converted exactly as the compiled loop does."""

    def __init__(self, bitgen: np.random.PCG64):
        self.bitgen = bitgen

    def random(self) -> float:
        return _kernel.raw_to_unit(np.uint64(self.bitgen.random_raw()))

    def integers(self, high: int) -> int:
        return min(int(self.random() * high), high - 1)


@dataclass
class PolicyDump:
    """Snapshot of one player's learned Q-table and where it came from.

    ``player`` is 0 or 1, the seat the agent held in training. Observations
    are encoded from the agent's own perspective, so a dump can be seated
    in either position at test time.
    """

    player: int
    q: np.ndarray = field(repr=False)
    context: ContextSpec
    session: int
    converged: bool
    periods: int
    hyper: Hyperparams
    grid_prices: tuple[float, ...]
    final_state: int = 0

    @property
    def m(self) -> int:
        return len(self.grid_prices)

    @property
    def greedy(self) -> np.ndarray:
        return greedy_policy(self.q)

    @property
    def ties(self) -> list[int]:
        return tied_observations(self.q)

    @property
    def own_cost(self) -> float:
        return self.context.params.cost[self.player]


@dataclass
class LearningRun:
    periods: int
    converged: bool
    final_state: int
    greedy: tuple[np.ndarray, np.ndarray] = field(repr=False)


def run_learning(q1: np.ndarray, q2: np.ndarray, grid: PriceGrid, context: ContextSpec,
                 hyper: Hyperparams, initial_state: int, bitgen: np.random.PCG64,
                 explore: bool = True, trace: np.ndarray | None = None,
                 chunk: int = 1 << 16) -> LearningRun:
    """Let both agents learn from the same play until convergence or ``hyper.max_periods``.

    ``q1`` and ``q2`` are updated in place. With ``explore=False`` epsilon is
    held at zero but updates continue. If ``trace`` is given, the joint state
    reached in each of its first ``trace.size`` periods is recorded there.
    """
    if trace is None:
        trace = np.empty(0, dtype=np.int64)
    m = grid.m
    rewards = profit_matrix(grid.prices, context.params)
    obs1, obs2 = observation_maps(context.mode, m)
    greedy1, greedy2 = greedy_policy(q1), greedy_policy(q2)
    t, s, stable, converged = 0, int(initial_state), 0, False
    size = 4096
    while t < hyper.max_periods and not converged:
        n = min(size, hyper.max_periods - t)
        raw = bitgen.random_raw(_kernel.DRAWS_PER_PERIOD * n)
        done, s, stable, converged = _kernel.learn_chunk(
            q1, q2, greedy1, greedy2, rewards, obs1, obs2, s, t, stable,
            hyper.alpha, hyper.delta, hyper.beta, explore, hyper.window, raw, trace)
        t += done
        size = min(2 * size, chunk)
    return LearningRun(int(t), bool(converged), int(s), (greedy1, greedy2))
