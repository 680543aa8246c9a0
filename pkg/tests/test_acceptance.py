"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``[acceptance] criterion N: PASS|FAIL (...)`` line,
visible even without ``-s``. Learning-based criteria use the desk-scale
profile (beta=4e-5, W=10,000, T_max=1e8, 50 sessions).
"""

import dataclasses
import os
import time

import numpy as np
import pytest

from collusionlab.analysis import (ConvergenceType, OutcomeKind, ProfitBenchmarks,
                                   classify_outcome, collusion_metrics)
from collusionlab.config import apply_scale, default_plan
from collusionlab.environment import EconomicParams, ObservationMode
from collusionlab.equilibrium import benchmark_table, build_grid, solve_monopoly, solve_nash
from collusionlab.experiments import (BASELINE_COSTS, TestMode, context_id, deviation_response,
                                      pair_sessions, run_cross_cost_matrix,
                                      run_deviation_experiment, run_tests, run_training_session,
                                      train_contexts)
from collusionlab.outputs import policy_dump_text, read_policy_dump, write_policy_dump
from collusionlab.qlearning import epsilon, q_update
from collusionlab.strategy_graph import build_strategy_graph, graph_stats

from oracles import brute_force_classes

RANDOMIZATION_TABLE = {
    1.0: (0.13, 0.63, 0.80), 1.1: (0.09, 0.50, 0.67), 1.2: (0.02, 0.36, 0.53),
    1.3: (-0.08, 0.32, 0.39), 1.4: (-0.21, 0.17, 0.25), 1.5: (-0.36, 0.04, 0.11),
    1.6: (-0.54, -0.04, -0.02), 1.7: (-0.73, -0.17, -0.15),
}
WORKERS = max(1, min(4, os.cpu_count() or 1))


def desk(observation=ObservationMode.FULL_MEMORY, costs=(1.2,)):
    plan = apply_scale(default_plan(), "desk")
    return dataclasses.replace(plan, cost_levels=costs, observation=observation, workers=WORKERS)


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return _report


def _train(plan):
    grid = plan.build_grid()
    return grid, train_contexts(plan.training_contexts(), grid, plan.hyper, plan.sessions,
                                plan.horizon, plan.workers)


@pytest.fixture(scope="module")
def full_memory():
    plan = desk()
    grid, res = _train(plan)
    return plan, grid, res


@pytest.fixture(scope="module")
def own_price():
    plan = desk(ObservationMode.OWN_PRICE)
    grid, res = _train(plan)
    return plan, grid, res


def _train_mean(results):
    return float(np.mean([r.outcome.collusion_index for r in results if r.outcome.converged]))


def _cross_seed_test(plan, res, cost=1.2):
    a, b = res[context_id(cost, 0)], res[context_id(cost, 1)]
    pairs = pair_sessions(a, b, plan.params(cost), TestMode.FIXED_POLICY, plan.master_seed,
                          f"{context_id(cost, 0)}|{context_id(cost, 1)}")
    return run_tests(pairs, plan.horizon, plan.hyper, plan.workers)


def test_criterion_01_equilibrium_anchors(report):
    t = time.perf_counter()
    n = solve_nash(EconomicParams.from_costs((1.0, 1.0)))
    c = solve_monopoly(EconomicParams.from_costs((1.7, 1.7)))
    dt = time.perf_counter() - t
    ok = (max(abs(p - 1.47) for p in n.prices) <= 0.01
          and max(abs(p - 2.62) for p in c.prices) <= 0.01 and dt < 1.0)
    report(1, ok, f"p^N={n.prices[0]:.5f}, p^C(1.7)={c.prices[0]:.5f}, {dt:.3f}s")


def test_criterion_02_cost_invariance(report):
    t = time.perf_counter()
    nash, coop = [], []
    for cost in BASELINE_COSTS:
        params = EconomicParams.from_costs((cost, cost))
        nash.append(solve_nash(params).profits)
        coop.append(solve_monopoly(params).profits)
    dt = time.perf_counter() - t
    spread = max(np.ptp(np.array(nash), axis=0).max(), np.ptp(np.array(coop), axis=0).max())
    report(2, spread <= 1e-8 and dt < 1.0, f"max spread {spread:.2e}, {dt:.3f}s")


def test_criterion_03_randomization_table(report):
    t = time.perf_counter()
    grid = build_grid([EconomicParams.from_costs((c, c)) for c in BASELINE_COSTS])
    table = benchmark_table(grid, BASELINE_COSTS)
    dt = time.perf_counter() - t
    worst = 0.0
    for cost, b in table:
        got = (b.both_randomize, b.nash_vs_random, b.best_response_vs_random)
        expected = RANDOMIZATION_TABLE[round(cost, 2)]
        worst = max(worst, max(abs(x - y) for x, y in zip(got, expected)))
    report(3, worst <= 0.02 and dt < 1.0, f"24 entries, max deviation {worst:.4f}, {dt:.3f}s")


def test_criterion_04_desk_training(report, full_memory):
    plan, _, res = full_memory
    rs = res[context_id(1.2, 0)]
    conv = float(np.mean([r.outcome.converged for r in rs]))
    mean_m = _train_mean(rs)
    ok = 0.6 <= mean_m <= 1.0 and conv >= 0.9
    report(4, ok, f"{len(rs)} sessions, mean M={mean_m:.3f}, converged {conv:.0%}")


def test_criterion_05_collusion_breaks_down(report, full_memory):
    plan, _, res = full_memory
    train_m = _train_mean(res[context_id(1.2, 0)] + res[context_id(1.2, 1)])
    tests = _cross_seed_test(plan, res)
    test_m = float(np.mean([t.first.collusion_index for t in tests]))
    ok = test_m <= 0.3 and test_m <= train_m - 0.3
    report(5, ok, f"{len(tests)} pairs, test M={test_m:.3f} vs train M={train_m:.3f}")


def test_criterion_06_own_price_robustness(report, own_price):
    plan, _, res = own_price
    train_m = _train_mean(res[context_id(1.2, 0)] + res[context_id(1.2, 1)])
    tests = _cross_seed_test(plan, res)
    test_m = float(np.mean([t.first.collusion_index for t in tests]))
    gap = abs(test_m - train_m)
    report(6, gap <= 0.15, f"test M={test_m:.3f}, train M={train_m:.3f}, |diff|={gap:.3f}")


def test_criterion_07_deviation(report, full_memory):
    plan, _, res = full_memory
    both = []
    for r in res[context_id(1.2, 0)]:
        if not r.outcome.converged or r.outcome.collusion_index < 0.5:
            continue
        path = run_deviation_experiment(*r.dumps, plan.deviation_pre, plan.deviation_post)
        resp = deviation_response(path)
        both.append(resp.punished and resp.return_period is not None)
    share = float(np.mean(both)) if both else 0.0
    report(7, share > 0.5, f"{len(both)} collusive sessions, punished and returned in {share:.0%}")


def test_criterion_08_graph_oracle(report, full_memory, tmp_path):
    _, grid, res = full_memory
    mismatches, pairs = 0, 0
    for r in res[context_id(1.2, 0)]:
        path = write_policy_dump(tmp_path / f"s{r.session}.csv", *r.dumps)
        (a, b), _ = read_policy_dump(path)
        graph = build_strategy_graph(a, b)
        classes, _ = brute_force_classes(a.greedy, b.greedy, grid.m)
        mismatches += sum(c.value != o for c, o in zip(graph.node_class, classes))
        pairs += 1
    report(8, pairs >= 20 and mismatches == 0, f"{pairs} dumped pairs, {mismatches} mismatches")


def test_criterion_09_properties(report, full_memory):
    failures = []
    q = np.array([[2.0, 0.0], [3.0, 1.0]])
    before = q.copy()
    q_update(q, 0, 0, 1.0, 1, 0.0, 0.9)
    if not np.array_equal(q, before):
        failures.append("alpha=0")
    q_update(q, 0, 1, 0.7, 1, 1.0, 0.0)
    if q[0, 1] != 0.7:
        failures.append("alpha=1")
    q = np.array([[2.0, 0.0], [3.0, 1.0]])
    q_update(q, 0, 0, 1.0, 1, 0.5, 0.9)
    if abs(q[0, 0] - 2.85) > 1e-15:
        failures.append("q-update arithmetic")
    if epsilon(0, 4e-6) != 1.0 or abs(epsilon(10**6, 4e-6) - np.exp(-4)) > 1e-16:
        failures.append("epsilon")
    T = 200
    sym = np.tile([12, 12], (T, 1))
    asym = np.tile([12, 14], (T, 1))
    cyc = np.stack([np.tile([10, 11], T // 2), np.full(T, 5)], axis=1)
    if (classify_outcome(sym).kind is not OutcomeKind.SYMMETRIC
            or classify_outcome(asym).kind is not OutcomeKind.ASYMMETRIC
            or classify_outcome(cyc) != ConvergenceType(OutcomeKind.CYCLE, 2)):
        failures.append("classifier precedence")
    plan, grid, res = full_memory
    r = res[context_id(1.2, 0)][0]
    again = run_training_session(r.context, grid, plan.hyper, r.session, plan.horizon)
    if policy_dump_text(*r.dumps) != policy_dump_text(*again.dumps):
        failures.append("determinism")
    bench = ProfitBenchmarks.for_params(plan.params(1.2))
    rng = np.random.default_rng(0)
    for _ in range(100):
        M, g1, g2 = collusion_metrics(rng.uniform(0.1, 0.4, (50, 2)), bench)
        if abs(M - (g1 + g2) / 2) > 1e-12:
            failures.append("M = mean gains")
            break
    for rr in res[context_id(1.2, 0)]:
        if sum(graph_stats(build_strategy_graph(*rr.dumps)).basin_sizes) != grid.m ** 2:
            failures.append("basin partition")
            break
    report(9, not failures, "all property checks hold" if not failures else ", ".join(failures))


def test_criterion_10_cross_cost_matrix(report):
    plan = desk(costs=BASELINE_COSTS)
    grid = plan.build_grid()
    contexts = [plan.context(c, 0) for c in plan.cost_levels]
    res = train_contexts(contexts, grid, plan.hyper, plan.sessions, plan.horizon, plan.workers)
    by_cost = {ctx.params.cost[0]: res[ctx.context_id] for ctx in contexts}
    matrix = run_cross_cost_matrix(by_cost, plan, plan.workers)
    R = matrix.proportional_loss
    k = len(BASELINE_COSTS)
    diag = np.nanmean(np.diag(matrix.collusion_index))
    off = np.nanmean(matrix.collusion_index[~np.eye(k, dtype=bool)])
    report(10, R > 0, f"R_={R:.3f}, diagonal mean {diag:.3f}, off-diagonal mean {off:.3f}")
