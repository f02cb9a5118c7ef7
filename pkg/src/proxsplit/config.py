"""Run configuration files.

A config is a TOML file with ``[problem]``, ``[solver]`` and ``[bench]``
sections. Every key is checked against the schema below; unknown sections or
keys are errors, because a silently ignored typo corrupts a benchmark.
"""
from __future__ import annotations

import copy
import sys

if sys.version_info >= (3, 11):
    import tomllib as tomli
else:
    import tomli

from .exceptions import ConfigError

PROBLEM_KINDS = ("pet", "rof", "lasso", "pwls", "quadratic")

PROBLEM_KEYS = {
    "kind": str, "seed": int, "n": int, "n_angles": int, "n_bins": int,
    "counts": float, "alpha": float, "nonneg": bool, "noise": float,
    "lam": float, "K": list, "b": list, "d": int, "m": int,
    "channels": int, "rho": float, "variance": float, "coupling": str,
    "M": list, "c": list,
}

SOLVER_KEYS = {
    "name": str, "label": str, "lam": float, "eta": float, "tau": float, "sigma": float,
    "gamma": float, "theta": float, "max_iter": int, "tol": float, "inner_tol": float,
    "inner_decay": float, "inner_max_iter": int, "n_inner": int, "eta_damp": float,
    "certified": bool, "record_time": bool,
}

BENCH_KEYS = {
    "epsilons": list, "gt_iters": int, "reference": str, "reference_solver": str,
    "record_time": bool, "runs": list,
}

SOLVER_NAMES = ("pdhgmp", "precond-pdhgmp", "pidsplit", "fb-em-tv", "fb-em-tv-nes83",
                "admm", "ladmm", "drs", "fbs", "fista", "split-bregman")

DEFAULTS = {
    "problem": {"seed": 0},
    "solver": {"name": "pdhgmp"},
    "bench": {"epsilons": [0.05, 0.005], "gt_iters": 20000, "reference": "groundtruth.proximg",
              "record_time": False, "runs": []},
}


def _check_section(name, table, schema):
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    for key, val in table.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        typ = schema[key]
        if typ is float and isinstance(val, int) and not isinstance(val, bool):
            table[key] = float(val)
            continue
        if typ is int and isinstance(val, bool) or not isinstance(val, typ):
            raise ConfigError(f"[{name}] {key} must be {typ.__name__}, got {type(val).__name__}")


def validate(cfg):
    """Check a parsed config in place and fill defaults; returns it."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a table")
    for section in cfg:
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
    out = {}
    schemas = {"problem": PROBLEM_KEYS, "solver": SOLVER_KEYS, "bench": BENCH_KEYS}
    for section, schema in schemas.items():
        table = copy.deepcopy(cfg.get(section, {}))
        _check_section(section, table, schema)
        merged = copy.deepcopy(DEFAULTS[section])
        merged.update(table)
        out[section] = merged
    prob = out["problem"]
    if "kind" not in prob:
        raise ConfigError("[problem] needs a kind")
    if prob["kind"] not in PROBLEM_KINDS:
        raise ConfigError(f"problem kind must be one of {PROBLEM_KINDS}")
    if not 0 <= prob["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    for i, run in enumerate([out["solver"]] + out["bench"]["runs"]):
        where = "[solver]" if i == 0 else f"[[bench.runs]] #{i}"
        if not isinstance(run, dict):
            raise ConfigError(f"{where} must be a table")
        _check_section(where, run, SOLVER_KEYS)
        if run.get("name") not in SOLVER_NAMES:
            raise ConfigError(f"{where}: solver name must be one of {SOLVER_NAMES}")
    eps = out["bench"]["epsilons"]
    if not eps or not all(isinstance(e, (int, float)) and e > 0 for e in eps):
        raise ConfigError("bench.epsilons must be a non-empty list of positive numbers")
    if any(a <= b for a, b in zip(eps, eps[1:])):
        raise ConfigError("bench.epsilons must be strictly decreasing")
    if out["bench"].get("reference_solver", "direct") not in ("direct", "precond-pdhgmp"):
        raise ConfigError("bench.reference_solver must be 'direct' or 'precond-pdhgmp'")
    if out["bench"]["gt_iters"] < 1:
        raise ConfigError("bench.gt_iters must be positive")
    return out


def loads(text):
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return validate(raw)


def load(path):
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return validate(raw)
