"""Command-line entry point: ``collusionlab <command> [--config PATH] [--out DIR] ...``.

Experiment commands train (or reload) the policies they need, add their
rows to ``sessions.csv``, rebuild ``summary.csv`` and rewrite
``manifest.json`` in the output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import apply_scale, dump_config, load_config
from .environment import ContextSpec
from .equilibrium import benchmark_table, solve_monopoly, solve_nash
from .errors import CollusionLabError, ConfigError, InvalidInputError, SolverError
from .experiments import (ExperimentPlan, TrainingResult, parallel_map, train_task, context_id,
                          deviation_response, pair_sessions, result_from_dumps,
                          run_cross_cost_matrix, run_deviation_experiment, run_random_restart,
                          run_tests)
from .outputs import (SESSION_COLUMNS, SUMMARY_COLUMNS, atomic_write, csv_text, read_policy_dump,
                      read_session_rows, session_row, summarize, write_manifest, write_policy_dump)
from .qlearning import stable_id
from .strategy_graph import build_strategy_graph, graph_stats

log = logging.getLogger("collusionlab")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_UNCONVERGED = 0, 2, 3, 4
RECONV = "test_reconv"


def first_phase(plan: ExperimentPlan) -> str:
    """Phase label of metrics over the first ``horizon`` test periods."""
    return f"test_{plan.horizon}"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Run:
    """Output directory bookkeeping for one command invocation."""

    def __init__(self, plan: ExperimentPlan, command: str):
        self.plan = plan
        self.command = command
        self.out = Path(plan.out_dir)
        self.files: set[Path] = set()
        self.started = _now()
        self.grid = plan.build_grid()
        self.contexts: dict[str, ContextSpec] = {}
        self.unconverged: dict[str, float] = {}

    def write(self, rel: str, text: str) -> Path:
        path = atomic_write(self.out / rel, text)
        self.files.add(path)
        return path

    # training with dump reuse

    def _dump_path(self, ctx: ContextSpec, session: int) -> Path:
        return self.out / "dumps" / ctx.context_id / f"session_{session:04d}.csv"

    def _load(self, ctx: ContextSpec) -> list[TrainingResult] | None:
        out = []
        for s in range(self.plan.sessions):
            path = self._dump_path(ctx, s)
            if not path.exists():
                return None
            try:
                dumps, meta = read_policy_dump(path)
            except (InvalidInputError, KeyError, ValueError):
                log.warning("ignoring unreadable dump %s", path)
                return None
            d = dumps[0]
            if (d.context != ctx or d.hyper != self.plan.hyper or d.session != s
                    or tuple(d.grid_prices) != self.grid.prices):
                return None
            out.append(result_from_dumps(dumps, int(meta["initial_state"]), self.plan.horizon))
            self.files.add(path)
        return out

    def training(self, contexts) -> dict[str, list[TrainingResult]]:
        results: dict[str, list[TrainingResult]] = {}
        todo = []
        for ctx in contexts:
            self.contexts[ctx.context_id] = ctx
            loaded = self._load(ctx)
            if loaded is None:
                todo.append(ctx)
            else:
                log.info("reusing %d dumps for %s", len(loaded), ctx.context_id)
                results[ctx.context_id] = loaded
        tasks = [(c, self.grid, self.plan.hyper, s, self.plan.horizon)
                 for c in todo for s in range(self.plan.sessions)]
        if tasks:
            log.info("training %d sessions in %d contexts", len(tasks), len(todo))
        for ctx in todo:
            results[ctx.context_id] = []
        for r in parallel_map(train_task, tasks, self.plan.workers):
            results[r.context.context_id].append(r)
            path = self._dump_path(r.context, r.session)
            write_policy_dump(path, *r.dumps, initial_state=r.initial_state)
            self.files.add(path)
        for cid, rs in results.items():
            rs.sort(key=lambda r: r.session)
            if rs:
                self.unconverged[cid] = float(np.mean([not r.outcome.converged for r in rs]))
        return dict(sorted(results.items()))

    def train_rows(self, results: dict[str, list[TrainingResult]]) -> list[list]:
        rows = []
        for rs in results.values():
            for r in rs:
                rows.append(session_row(r.context.context_id, r.session, "train",
                                        r.context.params.cost, r.outcome))
        return rows

    # tables and manifest

    def record(self, rows: list[list]) -> list[list]:
        """Merge ``rows`` into sessions.csv and rebuild summary.csv.

        Existing rows for any (context, phase) present in ``rows`` are replaced.
        """
        path = self.out / "sessions.csv"
        fresh = {(r[0], r[2]) for r in rows}
        kept = []
        if path.exists():
            try:
                kept = [r for r in read_session_rows(path) if (r[0], r[2]) not in fresh]
            except (InvalidInputError, ValueError, IndexError):
                log.warning("discarding unreadable %s", path)
        merged = sorted(kept + rows, key=lambda r: (r[0], r[2], r[1]))
        text = csv_text(SESSION_COLUMNS, merged)
        self.write("sessions.csv", text)
        canonical = read_session_rows(path)
        self.write("summary.csv", csv_text(SUMMARY_COLUMNS, summarize(canonical)))
        return canonical

    def finish(self) -> int:
        self.write("config.resolved.toml", dump_config(self.plan))
        seeds = {cid: {"master_seed": c.seed, "stream_id": stable_id(cid)}
                 for cid, c in sorted(self.contexts.items())}
        payload = {
            "tool": "collusionlab",
            "version": __version__,
            "command": self.command,
            "master_seed": self.plan.master_seed,
            "config": dump_config(self.plan),
            "context_seeds": seeds,
            "started": self.started,
            "finished": _now(),
            "unconverged_fraction": self.unconverged,
        }
        write_manifest(self.out, payload, self.files)
        bad = {cid: f for cid, f in self.unconverged.items()
               if f > self.plan.max_unconverged_fraction}
        if bad:
            for cid, f in bad.items():
                log.error("%s: %.1f%% of sessions did not converge (limit %.1f%%)", cid, 100 * f,
                          100 * self.plan.max_unconverged_fraction)
            return EXIT_UNCONVERGED
        return EXIT_OK


# --- commands -----------------------------------------------------------------

def cmd_solve(plan: ExperimentPlan, args) -> int:
    rows = []
    for c in plan.cost_levels:
        params = plan.params(c)
        n, mono = solve_nash(params), solve_monopoly(params)
        rows.append([c, n.prices[0], n.profits[0], mono.prices[0], mono.profits[0]])
    sys.stdout.write(csv_text(("cost_level", "nash_price", "nash_profit", "monopoly_price",
                               "monopoly_profit"), rows))
    return EXIT_OK


def cmd_grid(plan: ExperimentPlan, args) -> int:
    grid = plan.build_grid()
    sys.stdout.write(csv_text(("index", "price"), enumerate(grid.prices)))
    return EXIT_OK


def cmd_bench_table(plan: ExperimentPlan, args) -> int:
    grid = plan.build_grid()
    table = benchmark_table(grid, plan.cost_levels, plan.markup, plan.mu)
    lines = ["cost_level,both_randomize,nash,best_response"]
    for c, b in table:
        lines.append(f"{c:.2f},{b.both_randomize:.2f},{b.nash_vs_random:.2f},"
                     f"{b.best_response_vs_random:.2f}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def _plot_by_cost(run: Run, rows: list[list]) -> None:
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r[5]:
            groups.setdefault((r[2], r[3], r[4]), []).append(float(r[10]))
    series = [[phase, c1, c2, float(np.mean(v))] for (phase, c1, c2), v in sorted(groups.items())]
    run.write("plots/collusion_by_cost.csv", csv_text(("phase", "x_cost_1", "x_cost_2", "y"),
                                                      series))


def cmd_train(run: Run, args) -> int:
    results = run.training(run.plan.training_contexts())
    rows = run.record(run.train_rows(results))
    conv = [[cid, r.session, r.outcome.periods] for cid, rs in results.items() for r in rs]
    run.write("plots/convergence_periods.csv", csv_text(("context_id", "x", "y"), conv))
    _plot_by_cost(run, rows)
    return run.finish()


def _replica_pairs(plan: ExperimentPlan):
    if plan.seed_contexts < 2:
        raise ConfigError("cross-seed testing needs seed_contexts >= 2")
    for c in plan.cost_levels:
        for k in range(plan.seed_contexts - 1):
            yield c, context_id(c, k), context_id(c, k + 1)


def cmd_test(run: Run, args) -> int:
    plan = run.plan
    results = run.training(plan.training_contexts())
    rows = run.train_rows(results)
    first = first_phase(plan)
    for c, a, b in _replica_pairs(plan):
        eval_id = f"{a}|{b}"
        pairs = pair_sessions(results[a], results[b], plan.params(c), plan.test_mode,
                              plan.master_seed, eval_id)
        for res in run_tests(pairs, plan.horizon, plan.hyper, plan.workers):
            rows.append(session_row(eval_id, res.session, first, (c, c), res.first))
            rows.append(session_row(eval_id, res.session, RECONV, (c, c), res.reconverged))
    rows = run.record(rows)
    _plot_by_cost(run, rows)
    return run.finish()


def cmd_restart(run: Run, args) -> int:
    plan = run.plan
    results = run.training(plan.training_contexts())
    rows = run.train_rows(results)
    for cid, rs in results.items():
        for r in rs:
            if r.outcome.converged:
                res = run_random_restart(*r.dumps, plan.horizon)
                rows.append(session_row(cid, r.session, "restart", r.context.params.cost,
                                        res.first))
    rows = run.record(rows)
    _plot_by_cost(run, rows)
    return run.finish()


def cmd_deviate(run: Run, args) -> int:
    plan = run.plan
    deviator = args.deviator - 1
    results = run.training(plan.training_contexts())
    per_session, paths = [], []
    for cid, rs in results.items():
        prices = []
        for r in rs:
            if not r.outcome.converged or r.outcome.collusion_index < args.min_index:
                continue
            path = run_deviation_experiment(*r.dumps, plan.deviation_pre, plan.deviation_post,
                                            deviator)
            resp = deviation_response(path)
            per_session.append([cid, r.session, resp.punished,
                                -1 if resp.return_period is None else resp.return_period,
                                resp.pre_mean[0], resp.pre_mean[1]])
            prices.append(path.prices)
            tau = path.tau
        if prices:
            mean = np.mean(prices, axis=0)
            paths.extend([cid, int(t), mean[k, 0], mean[k, 1]] for k, t in enumerate(tau))
    run.write("deviation_sessions.csv",
              csv_text(("context_id", "session", "punished", "return_period", "pre_price_1",
                        "pre_price_2"), per_session))
    run.write("plots/deviation_path.csv", csv_text(("context_id", "x", "y_price_1", "y_price_2"),
                                                   paths))
    run.record(run.train_rows(results))
    if per_session:
        punished = np.mean([r[2] for r in per_session])
        returned = np.mean([0 <= r[3] <= plan.deviation_post for r in per_session])
        print(f"collusive sessions: {len(per_session)}  punished: {punished:.3f}  "
              f"returned within {plan.deviation_post}: {returned:.3f}")
    return run.finish()


def cmd_matrix(run: Run, args) -> int:
    plan = run.plan
    contexts = [plan.context(c, 0) for c in plan.cost_levels]
    results = run.training(contexts)
    by_cost = {ctx.params.cost[0]: results[ctx.context_id] for ctx in contexts}
    matrix = run_cross_cost_matrix(by_cost, plan, plan.workers)
    costs = matrix.cost_levels
    rows = run.train_rows(results)
    first = first_phase(plan)
    for (i, j), items in sorted(matrix.cells.items()):
        if i == j:
            continue
        eval_id = f"{context_id(costs[i])}|{context_id(costs[j])}"
        for res in items:
            pair = (costs[i], costs[j])
            rows.append(session_row(eval_id, res.session, first, pair, res.first))
            rows.append(session_row(eval_id, res.session, RECONV, pair, res.reconverged))
    run.record(rows)
    cells = []
    for i, ci in enumerate(costs):
        for j, cj in enumerate(costs):
            cells.append([ci, cj, matrix.counts[i, j], matrix.collusion_index[i, j],
                          matrix.gain_1[i, j], matrix.gain_2[i, j], matrix.reconv_index[i, j]])
    run.write("plots/cross_cost_matrix.csv",
              csv_text(("x_cost_1", "x_cost_2", "n", "collusion_index", "delta_1", "delta_2",
                        "reconverged_index"), cells))
    if len(costs) > 1:
        print(f"average proportional loss R_: {matrix.proportional_loss:.6g}")
    return run.finish()


def cmd_graph(run: Run, args) -> int:
    plan = run.plan
    results = run.training(plan.training_contexts())
    stats = []
    for cid, rs in results.items():
        for r in rs:
            g = build_strategy_graph(*r.dumps)
            st = graph_stats(g, r.limit_cycle[0])
            base = f"graphs/{cid}/session_{r.session:04d}"
            run.write(base + ".nodes.csv", g.to_node_csv())
            run.write(base + ".dot", g.to_dot(f"{cid} session {r.session}"))
            stats.append([cid, r.session, st.n_stable_end, st.n_unstable_end,
                          len(st.cycle_lengths), ";".join(map(str, st.cycle_lengths)),
                          ";".join(map(str, st.basin_sizes)), st.unique_terminal,
                          st.limit_absorbing])
    run.write("graph_stats.csv",
              csv_text(("context_id", "session", "n_stable_end", "n_unstable_end", "n_cycles",
                        "cycle_lengths", "basin_sizes", "unique_terminal", "limit_absorbing"),
                       stats))
    run.record(run.train_rows(results))
    return run.finish()


def cmd_report(plan: ExperimentPlan, args) -> int:
    path = Path(plan.out_dir) / "sessions.csv"
    if not path.exists():
        raise ConfigError(f"{path} not found; run an experiment command first")
    sys.stdout.write(csv_text(SUMMARY_COLUMNS, summarize(read_session_rows(path))))
    return EXIT_OK


_PLAIN = {"solve": cmd_solve, "grid": cmd_grid, "bench-table": cmd_bench_table,
          "report": cmd_report}
_EXPERIMENTS = {"train": cmd_train, "test": cmd_test, "restart": cmd_restart,
                "deviate": cmd_deviate, "matrix": cmd_matrix, "graph": cmd_graph}
_HELP = {
    "solve": "static Nash and joint-profit-maximizing prices per cost level",
    "grid": "print the shared price grid",
    "bench-table": "randomization benchmarks relative to Nash profit",
    "report": "summarize an existing sessions.csv",
    "train": "train (or reload) all contexts",
    "test": "cross-seed testing at equal cost",
    "restart": "frozen play from random initial states in the training context",
    "deviate": "forced one-period deviation on collusive sessions",
    "matrix": "cross-cost train/test matrix",
    "graph": "strategy graphs of the learned policies",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", metavar="PATH", default=S, help="TOML plan")
    common.add_argument("--out", metavar="DIR", default=S, help="output directory")
    common.add_argument("--workers", type=int, metavar="N", default=S)
    common.add_argument("--master-seed", type=int, metavar="U64", default=S)
    common.add_argument("--scale", choices=("paper", "desk"), default=S)
    common.add_argument("-v", "--verbose", action="count", default=S)

    parser = argparse.ArgumentParser(prog="collusionlab", parents=[common],
                                     description="Q-learning pricing agents in a logit duopoly.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in (*_PLAIN, *_EXPERIMENTS):
        p = sub.add_parser(name, parents=[common], help=_HELP[name])
        if name == "deviate":
            p.add_argument("--deviator", type=int, choices=(1, 2), default=1)
            p.add_argument("--min-index", type=float, default=0.5,
                           help="only sessions whose training collusion index reaches this")
    return parser


def resolve_plan(args) -> ExperimentPlan:
    plan = apply_scale(load_config(getattr(args, "config", None)), getattr(args, "scale", None))
    changes = {}
    if hasattr(args, "out"):
        changes["out_dir"] = args.out
    if hasattr(args, "workers"):
        changes["workers"] = args.workers
    if hasattr(args, "master_seed"):
        changes["master_seed"] = args.master_seed
    problems = []
    if changes.get("workers", 1) < 1:
        problems.append("--workers must be >= 1")
    if not 0 <= changes.get("master_seed", 0) < 2**64:
        problems.append("--master-seed must be an unsigned 64-bit integer")
    if problems:
        raise ConfigError(problems)
    return dataclasses.replace(plan, **changes)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(getattr(args, "verbose", 0), logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        plan = resolve_plan(args)
        if args.command in _PLAIN:
            return _PLAIN[args.command](plan, args)
        run = Run(plan, args.command)
        return _EXPERIMENTS[args.command](run, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CollusionLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
