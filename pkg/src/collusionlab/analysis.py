"""Outcome metrics: collusion index, profit gains and convergence-type classification."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .environment import EconomicParams
from .equilibrium import solve_monopoly, solve_nash
from .errors import InvalidInputError, InvalidParameterizationError


class OutcomeKind(str, enum.Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"
    CYCLE = "cycle"
    OTHER = "other"


@dataclass(frozen=True)
class ConvergenceType:
    kind: OutcomeKind
    cycle_length: int | None = None

    def __str__(self):
        if self.kind is OutcomeKind.CYCLE:
            return f"cycle{self.cycle_length}"
        return self.kind.value

    @classmethod
    def parse(cls, text: str) -> "ConvergenceType":
        if text.startswith("cycle"):
            return cls(OutcomeKind.CYCLE, int(text[5:]))
        return cls(OutcomeKind(text))


@dataclass(frozen=True)
class ProfitBenchmarks:
    """Static Nash and joint-profit-maximizing profits per player."""

    nash: tuple[float, float]
    coop: tuple[float, float]

    @classmethod
    def for_params(cls, params: EconomicParams) -> "ProfitBenchmarks":
        return cls(solve_nash(params).profits, solve_monopoly(params).profits)


@dataclass(frozen=True)
class SessionOutcome:
    avg_profit: tuple[float, float]
    collusion_index: float
    gains: tuple[float, float]
    convergence_type: ConvergenceType
    periods: int
    horizon: int
    converged: bool = True


def collusion_metrics(profits, bench: ProfitBenchmarks) -> tuple[float, float, float]:
    """``(M, gain_1, gain_2)`` for a ``(T, 2)`` series of per-period profits.

    M normalizes summed profit between summed Nash (0) and summed
    joint-maximizing (1) profit; each gain does the same per player.
    """
    series = np.asarray(profits, dtype=float)
    if series.ndim != 2 or series.shape[1] != 2 or series.shape[0] == 0:
        raise InvalidInputError("profit series must be a non-empty (T, 2) array")
    nash = np.asarray(bench.nash)
    coop = np.asarray(bench.coop)
    if np.any(coop - nash == 0) or coop.sum() == nash.sum():
        raise InvalidParameterizationError("joint-maximizing profit equals Nash profit")
    mean = series.mean(axis=0)
    gains = (mean - nash) / (coop - nash)
    index = (mean.sum() - nash.sum()) / (coop.sum() - nash.sum())
    return float(index), float(gains[0]), float(gains[1])


def _lag_match(x: np.ndarray, lag: int) -> float:
    return float(np.mean(np.all(x[lag:] == x[:-lag], axis=-1)))


def classify_outcome(prices, max_cycle_len: int = 15, threshold: float = 0.9) -> ConvergenceType:
    """Classify a ``(T, 2)`` series of price indices.

    Symmetric: one common price pair ``(a, a)`` in more than ``threshold`` of
    rounds. Asymmetric: one pair ``(a, b)``, ``a != b``, likewise. Cycle(L):
    the smallest L in ``2..max_cycle_len`` such that the joint series repeats
    with lag L in more than ``threshold`` of rounds, or failing that the
    smallest L at which a single player's non-constant series does.
    """
    series = np.asarray(prices)
    if series.ndim != 2 or series.shape[1] != 2:
        raise InvalidInputError("price series must have shape (T, 2)")
    if series.shape[0] < 10 * max_cycle_len:
        raise InvalidInputError(
            f"series of length {series.shape[0]} is shorter than 10 * max_cycle_len"
        )
    pairs, counts = np.unique(series, axis=0, return_counts=True)
    top = int(np.argmax(counts))
    if counts[top] > threshold * series.shape[0]:
        a, b = pairs[top]
        return ConvergenceType(OutcomeKind.SYMMETRIC if a == b else OutcomeKind.ASYMMETRIC)

    lags = range(2, max_cycle_len + 1)
    for lag in lags:
        if _lag_match(series, lag) > threshold:
            return ConvergenceType(OutcomeKind.CYCLE, lag)

    def constant(x):
        return np.bincount(x).max() > threshold * x.size

    movers = [series[:, k:k + 1] for k in range(2) if not constant(series[:, k])]
    for lag in lags:
        if any(_lag_match(x, lag) > threshold for x in movers):
            return ConvergenceType(OutcomeKind.CYCLE, lag)
    return ConvergenceType(OutcomeKind.OTHER)


def avg_proportional_loss(matrix) -> float:
    """``(mean(diagonal) - mean(off-diagonal)) / mean(diagonal)``."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
        raise InvalidInputError("need a square matrix of size at least 2")
    diag = np.nanmean(np.diag(a))
    if diag == 0:
        raise InvalidInputError("mean of the diagonal is zero")
    off = np.nanmean(a[~np.eye(a.shape[0], dtype=bool)])
    return float((diag - off) / diag)


def cycle_counts(types) -> dict:
    """Tally convergence types into symmetric/asymmetric/other and per-length cycles."""
    counts = {"symmetric": 0, "asymmetric": 0, "other": 0}
    cycles: dict[int, int] = {}
    for t in types:
        if t.kind is OutcomeKind.CYCLE:
            cycles[t.cycle_length] = cycles.get(t.cycle_length, 0) + 1
        else:
            counts[t.kind.value] += 1
    counts["cycles"] = dict(sorted(cycles.items()))
    return counts
