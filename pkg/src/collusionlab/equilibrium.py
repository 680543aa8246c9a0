"""Static benchmarks of the stage game and the shared price grid.

The one-shot Nash equilibrium uses damped iteration on the logit first-order
condition ``p_i = c_i + mu / (1 - q_i(p))``. Joint-profit maximization uses
coordinate ascent where each coordinate is maximized exactly by a root search
on its partial derivative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .environment import EconomicParams, logit_demand, profit, profit_matrix
from .errors import InvalidInputError, SolverError


@dataclass(frozen=True)
class EquilibriumSolution:
    prices: tuple[float, ...]
    profits: tuple[float, ...]
    iterations: int
    residual: float

    @property
    def total_profit(self) -> float:
        return float(sum(self.profits))


@dataclass(frozen=True)
class PriceGrid:
    """Equally spaced prices available to every player.

    ``nash_floor`` and ``monopoly_ceiling`` are the lowest Nash price and the
    highest joint-profit price over the parameterizations the grid was built
    from; the grid extends ``xi`` times their distance beyond both.
    """

    prices: tuple[float, ...]
    lower: float
    upper: float
    xi: float
    nash_floor: float = float("nan")
    monopoly_ceiling: float = float("nan")
    parameterizations: tuple[EconomicParams, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "prices", tuple(float(p) for p in self.prices))
        if not self.prices:
            raise InvalidInputError("a price grid needs at least one point")

    @classmethod
    def from_prices(cls, prices: Sequence[float]) -> "PriceGrid":
        """Grid carrying only its points, e.g. one restored from a policy dump."""
        return cls(tuple(prices), prices[0], prices[-1], float("nan"))

    @property
    def m(self) -> int:
        return len(self.prices)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.prices)

    def nearest_index(self, price: float) -> int:
        return int(np.argmin(np.abs(self.array - price)))


def _solution(p, params, iterations, residual):
    return EquilibriumSolution(tuple(float(x) for x in p),
                               tuple(float(x) for x in profit(p, params)), iterations, residual)


def _check_tol(tol, max_iter):
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    if max_iter < 1:
        raise InvalidInputError("max_iter must be at least 1")


def nash_residual(prices, params: EconomicParams) -> float:
    p = np.asarray(prices, dtype=float)
    q = logit_demand(p, params)
    return float(np.max(np.abs(p - (np.asarray(params.cost) + params.mu / (1.0 - q)))))


def solve_nash(params: EconomicParams, tol: float = 1e-10, max_iter: int = 10_000,
               damping: float = 0.5) -> EquilibriumSolution:
    _check_tol(tol, max_iter)
    c = np.asarray(params.cost)
    p = c + params.mu
    residual = math.inf
    for it in range(1, max_iter + 1):
        target = c + params.mu / (1.0 - logit_demand(p, params))
        p = (1.0 - damping) * p + damping * target
        residual = nash_residual(p, params)
        if residual <= tol:
            return _solution(p, params, it, residual)
    raise SolverError("Nash iteration did not converge", residual, max_iter)


def joint_profit_gradient(prices, params: EconomicParams) -> np.ndarray:
    """Gradient of total profit; component i is ``q_i (1 - (markup_i - total) / mu)``."""
    p = np.asarray(prices, dtype=float)
    q = logit_demand(p, params)
    markup = p - np.asarray(params.cost)
    total = float(markup @ q)
    return q * (1.0 - (markup - total) / params.mu)


def _joint_profit_hessian(prices, params, h=1e-6):
    p = np.asarray(prices, dtype=float)
    n = p.size
    hess = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        hess[:, j] = (joint_profit_gradient(p + e, params) - joint_profit_gradient(p - e, params)) / (2 * h)
    return 0.5 * (hess + hess.T)


def solve_monopoly(params: EconomicParams, tol: float = 1e-10,
                   max_iter: int = 10_000) -> EquilibriumSolution:
    _check_tol(tol, max_iter)
    c = np.asarray(params.cost)
    p = c + params.mu + 1.0
    residual = math.inf
    for it in range(1, max_iter + 1):
        for i in range(p.size):
            def partial(x, i=i):
                trial = p.copy()
                trial[i] = x
                return joint_profit_gradient(trial, params)[i]

            # partial is positive at zero markup and negative once the markup
            # exceeds mu plus the largest attainable total profit
            hi = c[i] + params.mu + 1.0
            while partial(hi) > 0:
                hi = c[i] + 2.0 * (hi - c[i])
                if hi - c[i] > 1e6:
                    raise SolverError("could not bracket joint-profit line search", residual, it)
            p[i] = brentq(partial, c[i], hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        residual = float(np.max(np.abs(joint_profit_gradient(p, params))))
        if residual <= tol:
            eig = np.linalg.eigvalsh(_joint_profit_hessian(p, params))
            if np.any(eig >= 0):
                raise SolverError("joint-profit stationary point is not a local maximum", residual, it)
            return _solution(p, params, it, residual)
    raise SolverError("coordinate ascent did not converge", residual, max_iter)


def build_grid(parameterizations: Iterable[EconomicParams], m: int = 20,
               xi: float = 0.1) -> PriceGrid:
    params = tuple(parameterizations)
    if not params:
        raise InvalidInputError("need at least one parameterization")
    if m < 2:
        raise InvalidInputError("grid needs m >= 2 points")
    if not xi > 0:
        raise InvalidInputError("xi must be positive")
    low = min(min(solve_nash(p).prices) for p in params)
    high = max(max(solve_monopoly(p).prices) for p in params)
    span = high - low
    lower, upper = low - xi * span, high + xi * span
    prices = lower + (upper - lower) * np.arange(m) / (m - 1)
    prices[-1] = upper
    return PriceGrid(tuple(prices), lower, upper, xi, low, high, params)


def _own_share(x, opponent_prices, params, player):
    """Own logit share at price ``x`` against each opponent price."""
    g = params.quality
    z_own = (g[player] - x) / params.mu
    z_opp = (g[1 - player] - np.asarray(opponent_prices)) / params.mu
    z0 = params.outside_quality / params.mu
    top = np.maximum(np.maximum(z_own, z_opp), z0)
    e_own = np.exp(z_own - top)
    return e_own / (e_own + np.exp(z_opp - top) + np.exp(z0 - top))


def _expected_profit(x, opponent_prices, params, player):
    q = _own_share(x, opponent_prices, params, player)
    return float(np.mean((x - params.cost[player]) * q))


def _expected_profit_slope(x, opponent_prices, params, player):
    q = _own_share(x, opponent_prices, params, player)
    return float(np.mean(q * (1.0 - (x - params.cost[player]) * (1.0 - q) / params.mu)))


def best_response_to_uniform(grid: PriceGrid, params: EconomicParams, player: int = 0) -> float:
    """Own price maximizing expected profit when the rival draws uniformly from the grid."""
    opp = grid.array
    c = params.cost[player]
    # coarse scan locates the global maximum, root search on the slope polishes it
    hi = max(c, opp.max()) + 20.0 * params.mu + 1.0
    xs = np.linspace(c, hi, 4001)
    values = np.array([_expected_profit(x, opp, params, player) for x in xs])
    k = int(np.argmax(values))
    lo_x, hi_x = xs[max(k - 1, 0)], xs[min(k + 1, xs.size - 1)]
    f_lo = _expected_profit_slope(lo_x, opp, params, player)
    f_hi = _expected_profit_slope(hi_x, opp, params, player)
    if f_lo > 0 > f_hi:
        return float(brentq(_expected_profit_slope, lo_x, hi_x, args=(opp, params, player),
                            xtol=1e-13, maxiter=500))
    return float(xs[k])


@dataclass(frozen=True)
class RandomizationBenchmark:
    """Own-profit changes relative to static Nash profit, as fractions (0.01 = 1%)."""

    both_randomize: float
    nash_vs_random: float
    best_response_vs_random: float


def randomization_benchmarks(grid: PriceGrid, params: EconomicParams, player: int = 0,
                             snap_nash: bool = True) -> RandomizationBenchmark:
    """Expected profit when the rival prices uniformly at random on the grid.

    Three cases for the own price: also uniform on the grid, the static Nash
    price (the nearest grid point unless ``snap_nash`` is false), and the exact
    best reply to the uniform rival. Expectations are exact enumerations.
    """
    nash = solve_nash(params)
    pi_nash = nash.profits[player]
    table = profit_matrix(grid.prices, params)[..., player]
    # rows index player 1's price, so player 2's own price runs along axis 1
    own_by_opp = table if player == 0 else table.T
    both = float(own_by_opp.mean())

    p_nash = nash.prices[player]
    if snap_nash:
        p_nash = grid.prices[grid.nearest_index(p_nash)]
    vs_random = _expected_profit(p_nash, grid.array, params, player)
    best = _expected_profit(best_response_to_uniform(grid, params, player), grid.array, params, player)

    def rel(v):
        return (v - pi_nash) / pi_nash

    return RandomizationBenchmark(rel(both), rel(vs_random), rel(best))


def benchmark_table(grid: PriceGrid, cost_levels: Sequence[float], markup: float = 1.0,
                    mu: float = 0.25) -> list[tuple[float, RandomizationBenchmark]]:
    return [
        (c, randomization_benchmarks(grid, EconomicParams.from_costs((c, c), markup, mu)))
        for c in cost_levels
    ]
