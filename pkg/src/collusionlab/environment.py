"""Repeated logit Bertrand game: demand, rewards, transitions and observations.

Prices are carried around as indices into a shared price grid; real price
values only appear when rewards are evaluated. A state is the pair of
last-period price indices, encoded internally as ``i1 * m + i2``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, UnsupportedConfigurationError


class ObservationMode(str, enum.Enum):
    FULL_MEMORY = "full_memory"
    OWN_PRICE = "own_price"


@dataclass(frozen=True)
class EconomicParams:
    """Logit demand parameters for each player.

    Args:
        quality: product quality per player, in utility units.
        cost: constant marginal cost per player, in price units.
        mu: horizontal differentiation index, must be positive.
        outside_quality: quality of the outside good.
    """

    quality: tuple[float, ...]
    cost: tuple[float, ...]
    mu: float = 0.25
    outside_quality: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "quality", tuple(float(g) for g in self.quality))
        object.__setattr__(self, "cost", tuple(float(c) for c in self.cost))
        if len(self.quality) != len(self.cost) or not self.quality:
            raise InvalidInputError("quality and cost must have the same non-zero length")
        values = (*self.quality, *self.cost, self.mu, self.outside_quality)
        if not all(math.isfinite(v) for v in values):
            raise InvalidInputError("economic parameters must be finite")
        if self.mu <= 0:
            raise InvalidInputError(f"mu must be positive, got {self.mu}")

    @classmethod
    def from_costs(cls, costs: Sequence[float], markup: float = 1.0, mu: float = 0.25,
                   outside_quality: float = 0.0) -> "EconomicParams":
        """Parameterization with quality set to ``cost + markup`` for every player."""
        costs = tuple(float(c) for c in costs)
        return cls(tuple(c + markup for c in costs), costs, mu, outside_quality)

    @property
    def n_players(self) -> int:
        return len(self.cost)

    def quality_markup(self) -> np.ndarray:
        return np.asarray(self.quality) - np.asarray(self.cost)

    def assert_unit_markup(self, tol: float = 1e-12) -> None:
        """Check the normalization used throughout: quality minus cost is 1, outside quality 0."""
        gaps = self.quality_markup()
        if np.any(np.abs(gaps - 1.0) > tol) or abs(self.outside_quality) > tol:
            raise InvalidInputError(
                f"expected quality - cost == 1 and outside quality 0, got {gaps.tolist()} "
                f"and {self.outside_quality}"
            )

    def swapped(self) -> "EconomicParams":
        """Same market seen with the player labels reversed."""
        return EconomicParams(self.quality[::-1], self.cost[::-1], self.mu, self.outside_quality)


@dataclass(frozen=True)
class ContextSpec:
    """A fixed context: economics, seed and what the agents can observe."""

    context_id: str
    params: EconomicParams
    seed: int = 0
    mode: ObservationMode = ObservationMode.FULL_MEMORY
    n_players: int = 2

    def __post_init__(self):
        object.__setattr__(self, "mode", ObservationMode(self.mode))
        if self.n_players != 2:
            raise UnsupportedConfigurationError("only duopoly (n_players=2) is implemented")
        if self.params.n_players != self.n_players:
            raise InvalidInputError("params do not match the number of players")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class GameState:
    prices: tuple[int, int]
    context_id: str | None = None

    def index(self, m: int) -> int:
        return self.prices[0] * m + self.prices[1]

    @classmethod
    def from_index(cls, s: int, m: int, context_id: str | None = None) -> "GameState":
        return cls((int(s) // m, int(s) % m), context_id)


@dataclass(frozen=True)
class Observation:
    mode: ObservationMode
    index: int


def logit_demand(prices, params: EconomicParams) -> np.ndarray:
    p = np.asarray(prices, dtype=float)
    if p.shape != (params.n_players,):
        raise InvalidInputError(f"expected {params.n_players} prices, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("prices must be finite")
    z = (np.asarray(params.quality) - p) / params.mu
    z0 = params.outside_quality / params.mu
    top = max(z.max(), z0)
    e = np.exp(z - top)
    return e / (e.sum() + math.exp(z0 - top))


def profit(prices, params: EconomicParams) -> np.ndarray:
    p = np.asarray(prices, dtype=float)
    return (p - np.asarray(params.cost)) * logit_demand(p, params)


def profit_matrix(prices: Sequence[float], params: EconomicParams) -> np.ndarray:
    """Stage-game rewards on a price grid, shape ``(m, m, 2)``.

    Entry ``[i, j, k]`` is player k's profit when player 1 charges
    ``prices[i]`` and player 2 charges ``prices[j]``.
    """
    p = np.asarray(prices, dtype=float)
    g = np.asarray(params.quality)
    c = np.asarray(params.cost)
    mu = params.mu
    z1 = (g[0] - p)[:, None] / mu + np.zeros((1, p.size))
    z2 = (g[1] - p)[None, :] / mu + np.zeros((p.size, 1))
    z0 = params.outside_quality / mu
    top = np.maximum(np.maximum(z1, z2), z0)
    e1, e2 = np.exp(z1 - top), np.exp(z2 - top)
    denom = e1 + e2 + np.exp(z0 - top)
    out = np.empty((p.size, p.size, 2))
    out[..., 0] = (p[:, None] - c[0]) * e1 / denom
    out[..., 1] = (p[None, :] - c[1]) * e2 / denom
    return out


def transition(state: GameState, actions: Sequence[int], m: int) -> GameState:
    a = tuple(int(x) for x in actions)
    if len(a) != 2 or not all(0 <= x < m for x in a):
        raise InvalidInputError(f"actions {actions} out of range for grid of size {m}")
    return GameState(a, state.context_id)


def observation_size(mode: ObservationMode, m: int) -> int:
    return m * m if ObservationMode(mode) is ObservationMode.FULL_MEMORY else m


def encode_observation(own: int, rival: int, m: int, mode: ObservationMode) -> int:
    if not (0 <= own < m and 0 <= rival < m):
        raise InvalidInputError("price index out of range")
    if ObservationMode(mode) is ObservationMode.FULL_MEMORY:
        return own * m + rival
    return own


def decode_observation(index: int, m: int, mode: ObservationMode) -> tuple[int, ...]:
    """Inverse of :func:`encode_observation` (own price first)."""
    if not 0 <= index < observation_size(mode, m):
        raise InvalidInputError("observation index out of range")
    if ObservationMode(mode) is ObservationMode.FULL_MEMORY:
        return divmod(index, m)
    return (index,)


def observe(state: GameState, mode: ObservationMode, m: int) -> tuple[Observation, Observation]:
    """Each player's observation of ``state``, encoded from its own perspective."""
    i1, i2 = state.prices
    mode = ObservationMode(mode)
    return (
        Observation(mode, encode_observation(i1, i2, m, mode)),
        Observation(mode, encode_observation(i2, i1, m, mode)),
    )


def observation_maps(mode: ObservationMode, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`observe`: joint state index -> observation index, per player."""
    s = np.arange(m * m)
    i1, i2 = s // m, s % m
    if ObservationMode(mode) is ObservationMode.FULL_MEMORY:
        return i1 * m + i2, i2 * m + i1
    return i1.copy(), i2.copy()


def successor_map(greedy_1: np.ndarray, greedy_2: np.ndarray, mode: ObservationMode,
                  m: int) -> np.ndarray:
    """Next joint state under deterministic play of two greedy policies."""
    o1, o2 = observation_maps(mode, m)
    return np.asarray(greedy_1)[o1] * m + np.asarray(greedy_2)[o2]
