"""File formats: policy dumps, session and summary CSVs, plot series and the run manifest.

Every file is written to a temporary sibling and renamed into place, so a
failed run never leaves a half-written file behind.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .environment import ContextSpec, EconomicParams, ObservationMode
from .errors import InvalidInputError
from .qlearning import Hyperparams, PolicyDump

DUMP_FORMAT = 1

SESSION_COLUMNS = (
    "context_id", "session", "phase", "cost_1", "cost_2", "converged", "periods", "horizon",
    "profit_1", "profit_2", "collusion_index", "delta_1", "delta_2", "outcome",
)
SUMMARY_COLUMNS = (
    "context_id", "cost_1", "cost_2", "phase", "n_sessions", "mean_M", "sd_M", "mean_delta1",
    "mean_delta2", "n_symmetric", "n_asymmetric", "n_cycle_by_length", "n_other",
)


def fmt(x, digits: int = 6) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), f".{digits}g")
    return str(x)


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException as exc:
        tmp.unlink(missing_ok=True)
        if isinstance(exc, OSError):
            raise OSError(f"could not write {path}: {exc}") from exc
        raise
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence], digits: int = 6) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v, digits) for v in row])
    return buf.getvalue()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- policy dumps -------------------------------------------------------------

def _floats(values) -> str:
    return ",".join(format(float(v), ".17g") for v in values)


def policy_dump_text(dump_1: PolicyDump, dump_2: PolicyDump, extra: Mapping[str, object] = ()) -> str:
    """Serialize both players of one training session.

    Header lines are ``# key=value``; the body is CSV with one row per
    Q-table cell. Floats use 17 significant digits, which round-trips exactly.
    """
    ctx, h = dump_1.context, dump_1.hyper
    meta = {
        "format": DUMP_FORMAT,
        "context_id": ctx.context_id,
        "quality": _floats(ctx.params.quality),
        "cost": _floats(ctx.params.cost),
        "mu": _floats([ctx.params.mu]),
        "outside_quality": _floats([ctx.params.outside_quality]),
        "seed": ctx.seed,
        "observation": ctx.mode.value,
        "session": dump_1.session,
        "converged": fmt(dump_1.converged),
        "periods": dump_1.periods,
        "final_state": dump_1.final_state,
        "alpha": _floats([h.alpha]),
        "delta": _floats([h.delta]),
        "beta": _floats([h.beta]),
        "window": h.window,
        "max_periods": h.max_periods,
        "grid_prices": _floats(dump_1.grid_prices),
        "ties_player1": ",".join(map(str, dump_1.ties)),
        "ties_player2": ",".join(map(str, dump_2.ties)),
    }
    meta.update(extra)
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append("player,observation_index,action_index,q_value")
    for k, dump in enumerate((dump_1, dump_2), start=1):
        q = dump.q
        for o in range(q.shape[0]):
            for a in range(q.shape[1]):
                lines.append(f"{k},{o},{a},{format(float(q[o, a]), '.17g')}")
    return "\n".join(lines) + "\n"


def write_policy_dump(path, dump_1: PolicyDump, dump_2: PolicyDump, **extra) -> Path:
    return atomic_write(path, policy_dump_text(dump_1, dump_2, extra))


def read_policy_dump(path) -> tuple[tuple[PolicyDump, PolicyDump], dict[str, str]]:
    """Inverse of :func:`write_policy_dump`; also returns the raw header fields."""
    meta: dict[str, str] = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                meta[key] = value
            elif line and not line.startswith("player,"):
                p, o, a, v = line.split(",")
                rows.append((int(p), int(o), int(a), float(v)))
    if int(meta.get("format", -1)) != DUMP_FORMAT:
        raise InvalidInputError(f"{path}: unsupported dump format {meta.get('format')}")

    def floats(key):
        return tuple(float(x) for x in meta[key].split(","))

    params = EconomicParams(floats("quality"), floats("cost"), floats("mu")[0],
                            floats("outside_quality")[0])
    ctx = ContextSpec(meta["context_id"], params, int(meta["seed"]),
                      ObservationMode(meta["observation"]))
    hyper = Hyperparams(floats("alpha")[0], floats("delta")[0], floats("beta")[0],
                        int(meta["window"]), int(meta["max_periods"]))
    prices = floats("grid_prices")
    m = len(prices)
    n_obs = 1 + max(o for _, o, _, _ in rows)
    tables = [np.full((n_obs, m), np.nan), np.full((n_obs, m), np.nan)]
    for p, o, a, v in rows:
        tables[p - 1][o, a] = v
    if any(np.isnan(t).any() for t in tables):
        raise InvalidInputError(f"{path}: Q-table rows are incomplete")
    dumps = tuple(
        PolicyDump(k, tables[k], ctx, int(meta["session"]), meta["converged"] == "true",
                   int(meta["periods"]), hyper, prices, int(meta["final_state"]))
        for k in range(2)
    )
    return dumps, meta


# --- tables -------------------------------------------------------------------

def session_row(context_id: str, session: int, phase: str, costs, outcome) -> list:
    return [
        context_id, session, phase, costs[0], costs[1], outcome.converged, outcome.periods,
        outcome.horizon, outcome.avg_profit[0], outcome.avg_profit[1], outcome.collusion_index,
        outcome.gains[0], outcome.gains[1], str(outcome.convergence_type),
    ]


def summarize(rows: Sequence[Sequence]) -> list[list]:
    """Aggregate session rows per (context, phase); unconverged sessions are left out."""
    groups: dict[tuple, list] = {}
    for r in rows:
        rec = dict(zip(SESSION_COLUMNS, r))
        key = (rec["context_id"], rec["cost_1"], rec["cost_2"], rec["phase"])
        groups.setdefault(key, [])
        if rec["converged"] in (True, "true"):
            groups[key].append(rec)
    out = []
    for (cid, c1, c2, phase), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][3])):
        Ms = np.array([float(r["collusion_index"]) for r in recs])
        kinds = [str(r["outcome"]) for r in recs]
        cycles: dict[int, int] = {}
        for k in kinds:
            if k.startswith("cycle"):
                cycles[int(k[5:])] = cycles.get(int(k[5:]), 0) + 1
        out.append([
            cid, c1, c2, phase, len(recs),
            Ms.mean() if recs else float("nan"),
            Ms.std(ddof=1) if len(recs) > 1 else float("nan"),
            np.mean([float(r["delta_1"]) for r in recs]) if recs else float("nan"),
            np.mean([float(r["delta_2"]) for r in recs]) if recs else float("nan"),
            kinds.count("symmetric"), kinds.count("asymmetric"),
            ";".join(f"{L}:{n}" for L, n in sorted(cycles.items())),
            kinds.count("other"),
        ])
    return out


def read_session_rows(path) -> list[list]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SESSION_COLUMNS:
            raise InvalidInputError(f"{path}: unexpected header")
        rows = []
        for r in reader:
            rows.append([r[0], int(r[1]), r[2], float(r[3]), float(r[4]), r[5] == "true",
                         int(r[6]), int(r[7])] + [float(x) for x in r[8:13]] + [r[13]])
        return rows


def write_manifest(out_dir, payload: Mapping[str, object], files: Iterable[Path]) -> Path:
    """Record configuration, seeds, timestamps and the hash of every emitted file."""
    out_dir = Path(out_dir)
    hashes = {}
    for f in sorted(set(files)):
        hashes[Path(f).relative_to(out_dir).as_posix()] = file_sha256(f)
    body = dict(payload)
    body["files"] = hashes
    return atomic_write(out_dir / "manifest.json", json.dumps(body, indent=2, sort_keys=True) + "\n")


def verify_manifest(out_dir) -> list[str]:
    """Files whose current hash differs from the manifest (missing files included)."""
    out_dir = Path(out_dir)
    data = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    bad = []
    for rel, digest in data["files"].items():
        f = out_dir / rel
        if not f.exists() or file_sha256(f) != digest:
            bad.append(rel)
    return bad
