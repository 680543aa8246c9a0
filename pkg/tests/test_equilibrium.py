import numpy as np
import pytest

from collusionlab.environment import EconomicParams, profit
from collusionlab.equilibrium import (PriceGrid, benchmark_table, best_response_to_uniform,
                                      build_grid, joint_profit_gradient, nash_residual,
                                      randomization_benchmarks, solve_monopoly, solve_nash,
                                      _expected_profit)
from collusionlab.errors import InvalidInputError, SolverError
from collusionlab.experiments import BASELINE_COSTS

from oracles import brute_force_monopoly, grid_search_nash

BASE = EconomicParams.from_costs((1.0, 1.0))

# cost level -> (both randomize, nash, best response), in the table's units
RANDOMIZATION_TABLE = {
    1.0: (0.13, 0.63, 0.80), 1.1: (0.09, 0.50, 0.67), 1.2: (0.02, 0.36, 0.53),
    1.3: (-0.08, 0.32, 0.39), 1.4: (-0.21, 0.17, 0.25), 1.5: (-0.36, 0.04, 0.11),
    1.6: (-0.54, -0.04, -0.02), 1.7: (-0.73, -0.17, -0.15),
}


def test_nash_anchor():
    sol = solve_nash(BASE)
    assert sol.prices == pytest.approx((1.47, 1.47), abs=0.01)
    assert sol.residual <= 1e-10
    assert nash_residual(sol.prices, BASE) <= 1e-10


def test_nash_matches_grid_search_oracle():
    for costs in ((1.0, 1.0), (1.3, 1.3), (1.0, 1.4)):
        params = EconomicParams.from_costs(costs)
        oracle = grid_search_nash(params.quality, params.cost, params.mu)
        np.testing.assert_allclose(solve_nash(params).prices, oracle, atol=1e-4)


def test_nash_shifts_with_cost():
    a, b = solve_nash(BASE), solve_nash(EconomicParams.from_costs((1.3, 1.3)))
    np.testing.assert_allclose(np.subtract(b.prices, a.prices), 0.3, atol=1e-9)
    np.testing.assert_allclose(b.profits, a.profits, atol=1e-8)


def test_nash_large_mu():
    params = EconomicParams.from_costs((1.0, 1.0), mu=10.0)
    sol = solve_nash(params)
    assert min(sol.prices) > 1.0 + 2 * 0.47
    oracle = grid_search_nash(params.quality, params.cost, params.mu)
    np.testing.assert_allclose(sol.prices, oracle, atol=1e-3)


def test_nash_is_best_response_on_scan():
    sol = solve_nash(BASE)
    own = profit(sol.prices, BASE)[0]
    for x in np.arange(1.0, 3.0, 1e-3):
        assert profit((x, sol.prices[1]), BASE)[0] <= own + 1e-10


def test_nash_solver_failure_reported():
    with pytest.raises(SolverError) as err:
        solve_nash(BASE, max_iter=2)
    assert err.value.iterations == 2 and err.value.residual > 0


def test_bad_tolerance_rejected():
    with pytest.raises(InvalidInputError):
        solve_nash(BASE, tol=0.0)


def test_monopoly_anchors():
    hi = solve_monopoly(EconomicParams.from_costs((1.7, 1.7)))
    assert hi.prices == pytest.approx((2.62, 2.62), abs=0.01)
    lo = solve_monopoly(BASE)
    assert lo.prices == pytest.approx((1.92, 1.92), abs=0.01)
    assert np.max(np.abs(joint_profit_gradient(lo.prices, BASE))) <= 1e-10


def test_monopoly_matches_brute_force():
    for costs in ((1.0, 1.0), (1.0, 1.5)):
        params = EconomicParams.from_costs(costs)
        oracle = brute_force_monopoly(params.quality, params.cost, params.mu)
        np.testing.assert_allclose(solve_monopoly(params).prices, oracle, atol=1e-4)


def test_collusion_premium_and_ordering():
    n, c = solve_nash(BASE), solve_monopoly(BASE)
    assert c.total_profit > n.total_profit
    assert all(a < b for a, b in zip(n.prices, c.prices))


def test_profits_cost_invariant():
    ref_n, ref_c = solve_nash(BASE).profits, solve_monopoly(BASE).profits
    for c in BASELINE_COSTS:
        params = EconomicParams.from_costs((c, c))
        np.testing.assert_allclose(solve_nash(params).profits, ref_n, atol=1e-8)
        np.testing.assert_allclose(solve_monopoly(params).profits, ref_c, atol=1e-8)


def test_baseline_grid(baseline_grid):
    g = baseline_grid
    assert g.m == 20
    assert g.lower == pytest.approx(1.356, abs=0.02)
    assert g.upper == pytest.approx(2.735, abs=0.02)
    gaps = np.diff(g.array)
    assert np.ptp(gaps) < 1e-12
    span = g.monopoly_ceiling - g.nash_floor
    assert g.lower == pytest.approx(g.nash_floor - 0.1 * span, abs=1e-14)
    assert g.upper == pytest.approx(g.monopoly_ceiling + 0.1 * span, abs=1e-14)


def test_two_point_grid_and_single_parameterization():
    g = build_grid([BASE], m=2)
    assert g.prices == (g.lower, g.upper)
    assert g.nash_floor == pytest.approx(solve_nash(BASE).prices[0])
    assert g.monopoly_ceiling == pytest.approx(solve_monopoly(BASE).prices[0])


@pytest.mark.parametrize("kw", [dict(m=1), dict(xi=0.0)])
def test_grid_validation(kw):
    with pytest.raises(InvalidInputError):
        build_grid([BASE], **kw)
    with pytest.raises(InvalidInputError):
        build_grid([])


def test_randomization_table_reproduced(baseline_grid):
    for c, bench in benchmark_table(baseline_grid, BASELINE_COSTS):
        got = (bench.both_randomize, bench.nash_vs_random, bench.best_response_vs_random)
        np.testing.assert_allclose(got, RANDOMIZATION_TABLE[round(c, 2)], atol=0.02)


def test_randomization_table_spot_values(baseline_grid):
    b1 = randomization_benchmarks(baseline_grid, EconomicParams.from_costs((1.0, 1.0)))
    b7 = randomization_benchmarks(baseline_grid, EconomicParams.from_costs((1.7, 1.7)))
    assert b1.both_randomize == pytest.approx(0.13, abs=0.02)
    assert b7.both_randomize == pytest.approx(-0.73, abs=0.02)
    assert b1.best_response_vs_random == pytest.approx(0.80, abs=0.02)


def test_both_randomize_decreasing_in_cost(baseline_grid):
    vals = [b.both_randomize for _, b in benchmark_table(baseline_grid, BASELINE_COSTS)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_best_response_beats_every_grid_price(baseline_grid):
    x = best_response_to_uniform(baseline_grid, BASE)
    best = _expected_profit(x, baseline_grid.array, BASE, 0)
    assert x > 1.0
    for p in baseline_grid.prices:
        assert best >= _expected_profit(p, baseline_grid.array, BASE, 0)
    # fine scan around the optimum
    for p in np.linspace(x - 0.01, x + 0.01, 2001):
        assert best >= _expected_profit(p, baseline_grid.array, BASE, 0) - 1e-15


def test_best_response_to_single_point_grid():
    rival = 1.8
    grid = PriceGrid.from_prices((rival,))
    x = best_response_to_uniform(grid, BASE)
    scan = np.linspace(1.0, 3.0, 200001)
    vals = [profit((p, rival), BASE)[0] for p in scan[::100]]
    coarse = scan[::100][int(np.argmax(vals))]
    fine = np.linspace(coarse - 0.002, coarse + 0.002, 40001)
    target = fine[int(np.argmax([profit((p, rival), BASE)[0] for p in fine]))]
    assert x == pytest.approx(target, abs=2e-7)


def test_player_two_benchmarks_symmetric(baseline_grid):
    a = randomization_benchmarks(baseline_grid, BASE, player=0)
    b = randomization_benchmarks(baseline_grid, BASE, player=1)
    assert a.both_randomize == pytest.approx(b.both_randomize, abs=1e-12)
    assert a.best_response_vs_random == pytest.approx(b.best_response_vs_random, abs=1e-9)
