"""TOML experiment configuration.

Sections map onto modules::

    [economics]   markup, mu, outside_quality
    [grid]        m, xi, cost_levels
    [learning]    alpha, beta, delta, window, max_periods
    [experiment]  cost_levels, observation, sessions, seed_contexts, test_mode,
                  horizon, deviation_pre, deviation_post, master_seed,
                  max_unconverged_fraction, workers, out_dir

Every key is optional; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import logging
import sys
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .environment import ObservationMode
from .errors import ConfigError
from .experiments import ExperimentPlan, TestMode
from .qlearning import Hyperparams

log = logging.getLogger(__name__)

STUDIED_COST_RANGE = (1.0, 1.7)

DESK_SCALE = {"beta": 4e-5, "window": 10_000, "max_periods": 10**8, "sessions": 50}

# key -> (section, kind); kind drives type checking
_SCHEMA: dict[str, tuple[str, str]] = {
    "markup": ("economics", "float"),
    "mu": ("economics", "float"),
    "outside_quality": ("economics", "float"),
    "m": ("grid", "int"),
    "xi": ("grid", "float"),
    "grid_cost_levels": ("grid", "floats"),
    "alpha": ("learning", "float"),
    "beta": ("learning", "float"),
    "delta": ("learning", "float"),
    "window": ("learning", "int"),
    "max_periods": ("learning", "int"),
    "cost_levels": ("experiment", "floats"),
    "observation": ("experiment", "str"),
    "sessions": ("experiment", "int"),
    "seed_contexts": ("experiment", "int"),
    "test_mode": ("experiment", "str"),
    "horizon": ("experiment", "int"),
    "deviation_pre": ("experiment", "int"),
    "deviation_post": ("experiment", "int"),
    "master_seed": ("experiment", "int"),
    "max_unconverged_fraction": ("experiment", "float"),
    "workers": ("experiment", "int"),
    "out_dir": ("experiment", "str"),
}
_HYPER_KEYS = ("alpha", "beta", "delta", "window", "max_periods")


def _toml_key(key: str) -> str:
    # the grid section spells its cost list plainly
    return "cost_levels" if key == "grid_cost_levels" else key


def default_plan() -> ExperimentPlan:
    return ExperimentPlan(sessions=210)


def _flatten(doc: Mapping[str, Any]) -> tuple[dict[str, Any], list[str]]:
    sections = {s for s, _ in _SCHEMA.values()}
    lookup = {(sec, _toml_key(k)): k for k, (sec, _) in _SCHEMA.items()}
    flat, problems = {}, []
    for sec, body in doc.items():
        if sec not in sections or not isinstance(body, dict):
            problems.append(f"unknown section [{sec}]")
            continue
        for key, value in body.items():
            name = lookup.get((sec, key))
            if name is None:
                problems.append(f"unknown key '{key}' in [{sec}]")
            else:
                flat[name] = value
    return flat, problems


def _coerce(name: str, kind: str, value: Any, problems: list[str]):
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{name} must be a number, got {value!r}")
            return None
        return float(value)
    if kind == "int":
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{name} must be an integer, got {value!r}")
            return None
        return value
    if kind == "floats":
        if not isinstance(value, list) or not value or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            problems.append(f"{name} must be a non-empty list of numbers")
            return None
        return tuple(float(v) for v in value)
    if not isinstance(value, str):
        problems.append(f"{name} must be a string, got {value!r}")
        return None
    return value


def _validate(v: dict[str, Any], problems: list[str]) -> None:
    def need(ok, msg):
        if not ok:
            problems.append(msg)

    need(0.0 <= v["alpha"] <= 1.0, f"alpha={v['alpha']} outside legal range [0, 1]")
    need(0.0 <= v["delta"] < 1.0, f"delta={v['delta']} outside legal range [0, 1)")
    need(v["beta"] > 0, f"beta={v['beta']} must be > 0")
    need(v["window"] >= 1, f"window={v['window']} must be >= 1")
    need(v["max_periods"] >= 1, f"max_periods={v['max_periods']} must be >= 1")
    need(v["mu"] > 0, f"mu={v['mu']} must be > 0")
    need(v["m"] >= 2, f"m={v['m']} must be >= 2")
    need(v["xi"] > 0, f"xi={v['xi']} must be > 0")
    need(v["sessions"] >= 0, f"sessions={v['sessions']} must be >= 0")
    need(v["seed_contexts"] >= 1, f"seed_contexts={v['seed_contexts']} must be >= 1")
    need(v["horizon"] >= 150, f"horizon={v['horizon']} must be >= 150 (ten times the longest cycle)")
    need(v["deviation_pre"] >= 1, f"deviation_pre={v['deviation_pre']} must be >= 1")
    need(v["deviation_post"] >= 3, f"deviation_post={v['deviation_post']} must be >= 3")
    need(0 <= v["master_seed"] < 2**64, f"master_seed={v['master_seed']} must be an unsigned 64-bit integer")
    need(0.0 <= v["max_unconverged_fraction"] <= 1.0,
         f"max_unconverged_fraction={v['max_unconverged_fraction']} outside [0, 1]")
    need(v["workers"] >= 1, f"workers={v['workers']} must be >= 1")
    modes = [m.value for m in ObservationMode]
    need(v["observation"] in modes, f"observation={v['observation']!r} must be one of {modes}")
    tests = [t.value for t in TestMode]
    need(v["test_mode"] in tests, f"test_mode={v['test_mode']!r} must be one of {tests}")
    lo, hi = STUDIED_COST_RANGE
    for key in ("cost_levels", "grid_cost_levels"):
        for c in v[key]:
            if not lo <= c <= hi:
                log.warning("%s contains %s, outside the studied range [%s, %s]", key, c, lo, hi)


def plan_from_mapping(doc: Mapping[str, Any]) -> ExperimentPlan:
    flat, problems = _flatten(doc)
    values = plan_values(default_plan())
    for name, raw in flat.items():
        coerced = _coerce(name, _SCHEMA[name][1], raw, problems)
        if coerced is not None:
            values[name] = coerced
    _validate(values, problems)
    if problems:
        raise ConfigError(problems)
    hyper = Hyperparams(**{k: values.pop(k) for k in _HYPER_KEYS})
    return ExperimentPlan(hyper=hyper, **values)


def parse_config(text: str, source: str = "<string>") -> ExperimentPlan:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return plan_from_mapping(doc)


def load_config(path=None) -> ExperimentPlan:
    """Read a TOML plan; ``None`` gives the default plan."""
    if path is None:
        return default_plan()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(text, str(path))


def plan_values(plan: ExperimentPlan) -> dict[str, Any]:
    values = {f.name: getattr(plan, f.name) for f in dataclasses.fields(plan) if f.name != "hyper"}
    values.update({k: getattr(plan.hyper, k) for k in _HYPER_KEYS})
    values["observation"] = plan.observation.value
    values["test_mode"] = plan.test_mode.value
    return values


def apply_scale(plan: ExperimentPlan, scale: str | None) -> ExperimentPlan:
    if scale in (None, "paper"):
        return plan
    if scale != "desk":
        raise ConfigError(f"unknown scale {scale!r}; expected 'paper' or 'desk'")
    hyper = dataclasses.replace(plan.hyper, beta=DESK_SCALE["beta"], window=DESK_SCALE["window"],
                                max_periods=DESK_SCALE["max_periods"])
    return dataclasses.replace(plan, hyper=hyper, sessions=DESK_SCALE["sessions"])


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def dump_config(plan: ExperimentPlan) -> str:
    """Fully resolved plan as TOML; :func:`parse_config` reads it back unchanged."""
    values = plan_values(plan)
    out = []
    for section in ("economics", "grid", "learning", "experiment"):
        out.append(f"[{section}]")
        for name, (sec, _) in _SCHEMA.items():
            if sec == section:
                out.append(f"{_toml_key(name)} = {_toml_value(values[name])}")
        out.append("")
    return "\n".join(out)
