"""Training sessions, cross-context testing and the derived experiments.

A training context is identified by its cost level and a replica index
(``c1.20-k0``, ``c1.20-k1``, ...); replicas differ only in their random
stream. Testing pairs player 1 from one context with player 2 from another,
always taking the same session number from both.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .analysis import (ProfitBenchmarks, SessionOutcome, classify_outcome, collusion_metrics,
                       avg_proportional_loss)
from .environment import ContextSpec, EconomicParams, ObservationMode, profit_matrix, successor_map
from .equilibrium import PriceGrid, build_grid, solve_nash
from .errors import InvalidAssignmentError, InvalidInputError
from .qlearning import (Hyperparams, PolicyDump, RawUniforms, greedy_policy, init_q, run_learning,
                        session_bitgen)

log = logging.getLogger(__name__)

MAX_CYCLE_LEN = 15
BASELINE_COSTS = tuple(round(1.0 + 0.1 * k, 2) for k in range(8))


class TestMode(str, enum.Enum):
    FIXED_POLICY = "fixed_policy"
    UPDATE_NO_EXPLORATION = "update_no_exploration"


TestMode.__test__ = False


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything needed to reproduce a batch of sessions."""

    cost_levels: tuple[float, ...] = BASELINE_COSTS
    grid_cost_levels: tuple[float, ...] = BASELINE_COSTS
    markup: float = 1.0
    mu: float = 0.25
    outside_quality: float = 0.0
    m: int = 20
    xi: float = 0.1
    hyper: Hyperparams = field(default_factory=Hyperparams)
    observation: ObservationMode = ObservationMode.FULL_MEMORY
    sessions: int = 10
    seed_contexts: int = 2
    test_mode: TestMode = TestMode.FIXED_POLICY
    horizon: int = 1000
    deviation_pre: int = 10
    deviation_post: int = 30
    master_seed: int = 0
    max_unconverged_fraction: float = 0.1
    workers: int = 1
    out_dir: str = "out"

    def __post_init__(self):
        object.__setattr__(self, "observation", ObservationMode(self.observation))
        object.__setattr__(self, "test_mode", TestMode(self.test_mode))
        object.__setattr__(self, "cost_levels", tuple(float(c) for c in self.cost_levels))
        object.__setattr__(self, "grid_cost_levels", tuple(float(c) for c in self.grid_cost_levels))

    def params(self, cost_1: float, cost_2: float | None = None) -> EconomicParams:
        cost_2 = cost_1 if cost_2 is None else cost_2
        return EconomicParams.from_costs((cost_1, cost_2), self.markup, self.mu, self.outside_quality)

    def build_grid(self) -> PriceGrid:
        return build_grid([self.params(c) for c in self.grid_cost_levels], self.m, self.xi)

    def context(self, cost: float, replica: int = 0) -> ContextSpec:
        return ContextSpec(context_id(cost, replica), self.params(cost), self.master_seed,
                           self.observation)

    def training_contexts(self) -> list[ContextSpec]:
        return [self.context(c, r) for c in self.cost_levels for r in range(self.seed_contexts)]


def context_id(cost: float, replica: int = 0) -> str:
    return f"c{cost:.2f}-k{replica}"


@dataclass
class TrainingResult:
    context: ContextSpec
    session: int
    dumps: tuple[PolicyDump, PolicyDump]
    outcome: SessionOutcome
    initial_state: int
    limit_cycle: tuple[int, ...]


@dataclass(frozen=True)
class TestAssignment:
    """Two learned policies seated in an evaluation context.

    ``policy_1`` plays as player 1 and ``policy_2`` as player 2; each keeps
    the own parameters it was trained with.
    """

    __test__ = False  # not a pytest class

    policy_1: PolicyDump
    policy_2: PolicyDump
    context: ContextSpec
    mode: TestMode = TestMode.FIXED_POLICY

    def __post_init__(self):
        a, b = self.policy_1, self.policy_2
        if tuple(a.grid_prices) != tuple(b.grid_prices):
            raise InvalidAssignmentError("policies were trained on different price grids")
        if a.context.mode != b.context.mode or self.context.mode != a.context.mode:
            raise InvalidAssignmentError("observation modes of policies and context differ")
        own = self.context.params
        for seat, policy in enumerate((a, b)):
            trained = policy.context.params
            k = policy.player
            if (own.cost[seat], own.quality[seat]) != (trained.cost[k], trained.quality[k]) \
                    or own.mu != trained.mu:
                raise InvalidAssignmentError(
                    f"seat {seat + 1} parameters differ from the policy's training parameters"
                )


@dataclass
class TestResult:
    __test__ = False
    assignment_id: str
    session: int
    context: ContextSpec
    first: SessionOutcome
    reconverged: SessionOutcome
    initial_state: int


@dataclass
class DeviationPath:
    """Prices around a forced deviation; ``tau == 0`` is the deviation period."""

    tau: np.ndarray
    price_index: np.ndarray
    prices: np.ndarray
    deviator: int
    deviation_index: int


# --- deterministic play ---------------------------------------------------

def play(successor: np.ndarray, start: int, periods: int) -> np.ndarray:
    """Joint states reached in each of ``periods`` periods of frozen greedy play."""
    out = np.empty(periods, dtype=np.int64)
    s = int(start)
    for t in range(periods):
        s = int(successor[s])
        out[t] = s
    return out


def limit_cycle(successor: np.ndarray, start: int) -> tuple[int, tuple[int, ...]]:
    """``(transient_length, cycle)`` of frozen play from ``start``.

    The transient counts periods played before the first cycle state is
    reached; the cycle lists the states reached in order.
    """
    seen: dict[int, int] = {}
    path = []
    s = int(successor[int(start)])
    while s not in seen:
        seen[s] = len(path)
        path.append(s)
        s = int(successor[s])
    k = seen[s]
    return k, tuple(path[k:])


def _tile(states: Sequence[int], length: int) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    reps = -(-length // states.size)
    return np.tile(states, reps)[:length]


def _prices(states: np.ndarray, m: int) -> np.ndarray:
    return np.stack([states // m, states % m], axis=1)


def evaluate_states(states: Sequence[int], rewards: np.ndarray, bench: ProfitBenchmarks, m: int,
                    periods: int, horizon: int, converged: bool = True,
                    classify_states: Sequence[int] | None = None) -> SessionOutcome:
    """Outcome metrics averaged over ``states``.

    ``classify_states`` defaults to ``states``; series shorter than the
    classifier's minimum are tiled (only sensible for cycles).
    """
    states = np.asarray(states, dtype=np.int64)
    idx = _prices(states, m)
    profits = rewards[idx[:, 0], idx[:, 1]]
    M, g1, g2 = collusion_metrics(profits, bench)
    cls = np.asarray(states if classify_states is None else classify_states, dtype=np.int64)
    if cls.size < 10 * MAX_CYCLE_LEN:
        cls = _tile(cls, 10 * MAX_CYCLE_LEN)
    kind = classify_outcome(_prices(cls, m), MAX_CYCLE_LEN)
    avg = profits.mean(axis=0)
    return SessionOutcome((float(avg[0]), float(avg[1])), M, (g1, g2), kind, int(periods),
                          int(horizon), bool(converged))


def _cycle_outcome(successor, start, rewards, bench, m, periods, horizon, converged):
    _, cycle = limit_cycle(successor, start)
    return evaluate_states(cycle, rewards, bench, m, periods, horizon, converged,
                           classify_states=_tile(cycle, max(horizon, 10 * MAX_CYCLE_LEN))), cycle


# --- sessions ---------------------------------------------------------------

def run_training_session(context: ContextSpec, grid: PriceGrid, hyper: Hyperparams,
                         session: int, horizon: int = 1000) -> TrainingResult:
    """Train two agents jointly and evaluate the limit cycle of their greedy play."""
    m = grid.m
    bitgen = session_bitgen(context.seed, context.context_id, session)
    s0 = RawUniforms(bitgen).integers(m * m)
    params = context.params
    q1 = init_q(grid, params, hyper.delta, 0, context.mode)
    q2 = init_q(grid, params, hyper.delta, 1, context.mode)
    run = run_learning(q1, q2, grid, context, hyper, s0, bitgen)
    dumps = tuple(
        PolicyDump(k, q, context, session, run.converged, run.periods, hyper, grid.prices,
                   run.final_state)
        for k, q in enumerate((q1, q2))
    )
    if not run.converged:
        log.warning("%s session %d did not converge in %d periods", context.context_id, session,
                    run.periods)
    return result_from_dumps(dumps, s0, horizon)


def result_from_dumps(dumps: tuple[PolicyDump, PolicyDump], initial_state: int,
                      horizon: int = 1000) -> TrainingResult:
    """Rebuild a training result (outcome and limit cycle) from the two learned Q-tables."""
    a, b = dumps
    context, m = a.context, a.m
    succ = successor_map(a.greedy, b.greedy, context.mode, m)
    rewards = profit_matrix(a.grid_prices, context.params)
    bench = ProfitBenchmarks.for_params(context.params)
    outcome, cycle = _cycle_outcome(succ, a.final_state, rewards, bench, m, a.periods, horizon,
                                    a.converged)
    return TrainingResult(context, a.session, tuple(dumps), outcome, int(initial_state), cycle)


def _assignment_id(assignment: TestAssignment) -> str:
    return (f"{assignment.policy_1.context.context_id}/p{assignment.policy_1.player + 1}"
            f"|{assignment.policy_2.context.context_id}/p{assignment.policy_2.player + 1}")


def run_test_session(assignment: TestAssignment, horizon: int, hyper: Hyperparams,
                     initial_state: int | None = None) -> TestResult:
    """Evaluate a pair of learned policies in the assignment's context.

    Fixed-policy mode freezes both Q-tables; re-convergence is the limit cycle
    of deterministic greedy play. Update mode keeps learning with epsilon at
    zero until the greedy policies are stable for ``hyper.window`` periods.
    """
    a, b, ctx = assignment.policy_1, assignment.policy_2, assignment.context
    m = a.m
    prices = a.grid_prices
    rewards = profit_matrix(prices, ctx.params)
    bench = ProfitBenchmarks.for_params(ctx.params)
    aid = _assignment_id(assignment)
    session = a.session
    bitgen = session_bitgen(ctx.seed, f"test:{ctx.context_id}:{aid}", session)
    if initial_state is None:
        initial_state = RawUniforms(bitgen).integers(m * m)

    if assignment.mode is TestMode.FIXED_POLICY:
        succ = successor_map(a.greedy, b.greedy, ctx.mode, m)
        first = evaluate_states(play(succ, initial_state, horizon), rewards, bench, m, horizon,
                                horizon)
        transient, cycle = limit_cycle(succ, initial_state)
        reconv = evaluate_states(cycle, rewards, bench, m, transient + len(cycle), horizon,
                                 classify_states=_tile(cycle, max(horizon, 10 * MAX_CYCLE_LEN)))
        return TestResult(aid, session, ctx, first, reconv, int(initial_state))

    q1, q2 = a.q.copy(), b.q.copy()
    trace = np.full(horizon, -1, dtype=np.int64)
    grid = PriceGrid.from_prices(prices)
    run = run_learning(q1, q2, grid, ctx, hyper, initial_state, bitgen, explore=False,
                       trace=trace)
    if run.periods < horizon:
        # converged inside the horizon: the rest of the window is frozen play
        succ = successor_map(greedy_policy(q1), greedy_policy(q2), ctx.mode, m)
        trace[run.periods:] = play(succ, run.final_state, horizon - run.periods)
    first = evaluate_states(trace, rewards, bench, m, horizon, horizon)
    succ = successor_map(greedy_policy(q1), greedy_policy(q2), ctx.mode, m)
    reconv, _ = _cycle_outcome(succ, run.final_state, rewards, bench, m, run.periods, horizon,
                               run.converged)
    return TestResult(aid, session, ctx, first, reconv, int(initial_state))


def run_random_restart(policy_1: PolicyDump, policy_2: PolicyDump, horizon: int,
                       initial_state: int | None = None) -> TestResult:
    """Frozen greedy play in the policies' own training context from a random state."""
    ctx = policy_1.context
    restart_ctx = replace(ctx, context_id=f"{ctx.context_id}:restart")
    assignment = TestAssignment(policy_1, policy_2, restart_ctx, TestMode.FIXED_POLICY)
    return run_test_session(assignment, horizon, policy_1.hyper, initial_state)


def run_deviation_experiment(policy_1: PolicyDump, policy_2: PolicyDump, pre_periods: int = 10,
                             post_periods: int = 30, deviator: int = 0,
                             deviation_index: int | None = None) -> DeviationPath:
    """Force one player's price for a single period and follow frozen greedy play.

    Play starts on the limit cycle reached from the end of training. By
    default the deviation is to the grid price nearest the deviator's static
    Nash price.
    """
    m = policy_1.m
    ctx = policy_1.context
    succ = successor_map(policy_1.greedy, policy_2.greedy, ctx.mode, m)
    _, cycle = limit_cycle(succ, policy_1.final_state)
    if deviation_index is None:
        nash = solve_nash(ctx.params).prices[deviator]
        deviation_index = int(np.argmin(np.abs(np.asarray(policy_1.grid_prices) - nash)))
    states = list(_tile(cycle, pre_periods)) if pre_periods else []
    prev = states[-1] if states else cycle[-1]
    forced = int(succ[prev])
    i1, i2 = divmod(forced, m)
    if deviator == 0:
        i1 = deviation_index
    else:
        i2 = deviation_index
    forced = i1 * m + i2
    states.append(forced)
    states.extend(play(succ, forced, post_periods).tolist())
    idx = _prices(np.asarray(states, dtype=np.int64), m)
    grid = np.asarray(policy_1.grid_prices)
    tau = np.arange(-pre_periods, post_periods + 1)
    return DeviationPath(tau, idx, grid[idx], deviator, deviation_index)


@dataclass(frozen=True)
class DeviationResponse:
    """How the non-deviating player reacted and whether prices came back.

    ``punished``: the rival's mean price over the ``window`` periods after
    the deviation is strictly below its pre-deviation mean. ``return_period``
    is the first ``tau >= 1`` at which both prices are within ``tolerance``
    (relative) of their pre-deviation means, or ``None``.
    """

    punished: bool
    return_period: int | None
    pre_mean: tuple[float, float]


def deviation_response(path: DeviationPath, window: int = 3,
                       tolerance: float = 0.1) -> DeviationResponse:
    pre = path.prices[path.tau < 0].mean(axis=0)
    post = path.prices[path.tau > 0]
    rival = 1 - path.deviator
    punished = bool(post[:window, rival].mean() < pre[rival])
    close = np.all(np.abs(post - pre) <= tolerance * pre, axis=1)
    hits = np.flatnonzero(close)
    ret = int(path.tau[path.tau > 0][hits[0]]) if hits.size else None
    return DeviationResponse(punished, ret, (float(pre[0]), float(pre[1])))


# --- batches ----------------------------------------------------------------

def train_task(args):
    context, grid, hyper, session, horizon = args
    return run_training_session(context, grid, hyper, session, horizon)


def test_task(args):
    assignment, horizon, hyper = args
    return run_test_session(assignment, horizon, hyper)


def parallel_map(fn: Callable, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def train_contexts(contexts: Iterable[ContextSpec], grid: PriceGrid, hyper: Hyperparams,
                   sessions: int, horizon: int = 1000, workers: int = 1
                   ) -> dict[str, list[TrainingResult]]:
    """Run ``sessions`` training sessions per context; results keyed by context id."""
    contexts = list(contexts)
    tasks = [(c, grid, hyper, s, horizon) for c in contexts for s in range(sessions)]
    results = parallel_map(train_task, tasks, workers)
    out: dict[str, list[TrainingResult]] = {c.context_id: [] for c in contexts}
    for r in results:
        out[r.context.context_id].append(r)
    for rs in out.values():
        rs.sort(key=lambda r: r.session)
    return out


def pair_sessions(first: Sequence[TrainingResult], second: Sequence[TrainingResult],
                  eval_params: EconomicParams, mode: TestMode, seed: int,
                  eval_id: str) -> list[TestAssignment]:
    """Seat player 1 of ``first[s]`` against player 2 of ``second[s]`` for each session s.

    Sessions where either side failed to converge are skipped.
    """
    if len(first) != len(second):
        raise InvalidInputError("paired contexts must have the same number of sessions")
    by_session = {r.session: r for r in second}
    out = []
    for r in first:
        other = by_session.get(r.session)
        if other is None:
            raise InvalidInputError(f"session {r.session} missing from paired context")
        if not (r.dumps[0].converged and other.dumps[1].converged):
            continue
        ctx = ContextSpec(eval_id, eval_params, seed, r.context.mode)
        out.append(TestAssignment(r.dumps[0], other.dumps[1], ctx, mode))
    return out


def run_tests(assignments: Sequence[TestAssignment], horizon: int, hyper: Hyperparams,
              workers: int = 1) -> list[TestResult]:
    return parallel_map(test_task, [(a, horizon, hyper) for a in assignments], workers)


@dataclass
class CrossCostMatrix:
    """Per-cell averages; rows index player 1's training cost, columns player 2's.

    Diagonal cells hold training outcomes, off-diagonal cells test outcomes
    over the first ``horizon`` periods (``reconv_index`` after re-convergence).
    """

    cost_levels: tuple[float, ...]
    collusion_index: np.ndarray
    gain_1: np.ndarray
    gain_2: np.ndarray
    reconv_index: np.ndarray
    counts: np.ndarray
    cells: dict = field(default_factory=dict, repr=False)

    @property
    def proportional_loss(self) -> float:
        return avg_proportional_loss(self.collusion_index)


def run_cross_cost_matrix(training: dict[float, Sequence[TrainingResult]], plan: ExperimentPlan,
                          workers: int = 1) -> CrossCostMatrix:
    """Pair player 1 trained at each row cost with player 2 trained at each column cost."""
    costs = tuple(sorted(training))
    k = len(costs)
    shape = (k, k)
    M, g1, g2, rc = (np.full(shape, np.nan) for _ in range(4))
    counts = np.zeros(shape, dtype=int)
    cells = {}
    jobs = []
    for i, ci in enumerate(costs):
        for j, cj in enumerate(costs):
            if i == j:
                done = [r.outcome for r in training[ci] if r.outcome.converged]
                cells[(i, j)] = done
                continue
            eval_id = f"{context_id(ci)}|{context_id(cj)}"
            pairs = pair_sessions(training[ci], training[cj], plan.params(ci, cj), plan.test_mode,
                                  plan.master_seed, eval_id)
            jobs.extend(((i, j), a) for a in pairs)
    results = run_tests([a for _, a in jobs], plan.horizon, plan.hyper, workers)
    for (cell, _), res in zip(jobs, results):
        cells.setdefault(cell, []).append(res)
    for (i, j), items in cells.items():
        if not items:
            continue
        if i == j:
            first = items
            reconv = items
        else:
            first = [r.first for r in items]
            reconv = [r.reconverged for r in items]
        M[i, j] = np.mean([o.collusion_index for o in first])
        g1[i, j] = np.mean([o.gains[0] for o in first])
        g2[i, j] = np.mean([o.gains[1] for o in first])
        rc[i, j] = np.mean([o.collusion_index for o in reconv])
        counts[i, j] = len(items)
    return CrossCostMatrix(costs, M, g1, g2, rc, counts, cells)
