"""Benchmark harness: reference solutions, solver sweeps and threshold reports.

The protocol follows the usual PET comparison: a long reference run fixes
``u*``; each solver then runs until its relative error to ``u*`` drops
below the smallest threshold, and the report lists, per threshold, the
first logged iteration that crossed it together with the cumulative
projector counts at that row.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from threadpoolctl import threadpool_limits

from .exceptions import ConfigError, DigestMismatchError, InvalidArgumentError
from .io import read_image, write_image
from .linops import Identity, RadonSpec, build_radon, power_method_norm
from .problems import (LassoProblem, PoissonTvProblem, PwlsProblem, RofProblem,
                       build_problem)
from .prox import LeastSquares, SquaredL2, Zero
from .simulate import (Ellipse, PhantomSpec, compute_ground_truth, correlated_sigma,
                       default_phantom_spec, make_phantom, make_rng, provenance_json,
                       simulate_correlated_sinograms, simulate_poisson_sinogram)
from .solvers import (CompositeProblem, Conjugate, DualComposite, SolverConfig,
                      run_admm, run_drs, run_fast_proximal_gradient, run_pdhgmp,
                      run_pidsplit, run_proximal_admm, run_proximal_gradient,
                      run_split_bregman, run_variable_metric_fb)

logger = logging.getLogger(__name__)

GT_IMAGE = "groundtruth.proximg"
GT_SIDECAR = "groundtruth.json"
SUMMARY_JSON = "summary.json"
SUMMARY_TXT = "summary.txt"

_CFG_FIELDS = ("lam", "eta", "tau", "sigma", "gamma", "theta", "max_iter", "tol",
               "inner_tol", "inner_decay", "inner_max_iter", "n_inner", "eta_damp",
               "certified", "record_time")

# ---------------------------------------------------------------------------
# problems from config
# ---------------------------------------------------------------------------


def second_channel_phantom(n):
    """Insert-only image used as the contrast channel of the PWLS instances."""
    return make_phantom(PhantomSpec(n, [
        Ellipse((0.3, 0.25), (0.2, 0.14), -0.4, 1.0),
        Ellipse((-0.25, -0.3), (0.18, 0.25), 0.3, 0.5),
    ]))


def build_instance(pcfg):
    """Synthetic instance for a ``[problem]`` table.

    Returns ``(spec, clean)`` where ``clean`` is the noise-free object
    (``None`` when there is none, e.g. a user-supplied LASSO).
    """
    kind = pcfg["kind"]
    rng = make_rng(pcfg.get("seed", 0))
    if kind == "pet":
        n = pcfg.get("n", 64)
        K = build_radon(RadonSpec(n, pcfg.get("n_angles", 90), pcfg.get("n_bins", 95)))
        img = make_phantom(default_phantom_spec(n))
        counts, _ = simulate_poisson_sinogram(K, img, pcfg.get("counts", 2e5), rng)
        return PoissonTvProblem(K, counts, pcfg.get("alpha", 3.0), (n, n),
                                nonneg=pcfg.get("nonneg", True)), img
    if kind == "rof":
        n = pcfg.get("n", 32)
        img = make_phantom(default_phantom_spec(n))
        img = img / img.max()
        f = img + pcfg.get("noise", 0.1) * rng.standard_normal(img.shape)
        return RofProblem(f, pcfg.get("alpha", 0.1)), img
    if kind == "lasso":
        lam = pcfg.get("lam", 0.1)
        if "K" in pcfg or "b" in pcfg:
            if "K" not in pcfg or "b" not in pcfg:
                raise ConfigError("lasso needs both K and b when either is given")
            return LassoProblem(np.atleast_2d(np.array(pcfg["K"], dtype=float)),
                                np.array(pcfg["b"], dtype=float), lam), None
        d, m = pcfg.get("d", 20), pcfg.get("m", 30)
        K = rng.standard_normal((m, d)) / math.sqrt(m)
        x = np.zeros(d)
        x[rng.choice(d, max(1, d // 5), replace=False)] = rng.standard_normal(max(1, d // 5))
        b = K @ x + pcfg.get("noise", 0.01) * rng.standard_normal(m)
        return LassoProblem(K, b, lam), x
    if kind == "pwls":
        return _pwls_instance(pcfg, rng)
    if kind == "quadratic":
        if "M" in pcfg:
            M = np.atleast_2d(np.array(pcfg["M"], dtype=float))
            c = np.array(pcfg.get("c", np.zeros(M.shape[0])), dtype=float)
        else:
            d = pcfg.get("d", 8)
            M = rng.standard_normal((pcfg.get("m", d + 4), d))
            c = rng.standard_normal(M.shape[0])
        return CompositeProblem(LeastSquares(M, c), Zero(), dim=M.shape[1]), None
    raise ConfigError(f"unknown problem kind {kind!r}")


def _pwls_instance(pcfg, rng, coupling=None):
    n = pcfg.get("n", 32)
    L = pcfg.get("channels", 2)
    if L < 1:
        raise ConfigError("channels must be positive")
    K = build_radon(RadonSpec(n, pcfg.get("n_angles", max(8, int(1.4 * n))),
                              pcfg.get("n_bins", int(1.5 * n))))
    first = make_phantom(default_phantom_spec(n))
    second = second_channel_phantom(n)
    images = [first] + [second * (1.0 / (l + 1) if l > 1 else 1.0) for l in range(1, L)]
    clean = np.stack(images)
    mean = np.concatenate([K.apply(im.ravel()) for im in images])
    if "variance" in pcfg:
        var = np.full((L, K.rows), pcfg["variance"])
    else:
        var = np.full((L, K.rows), (pcfg.get("noise", 0.02) * np.abs(mean).max()) ** 2)
    S = correlated_sigma(var, pcfg.get("rho", 0.9))
    data = simulate_correlated_sinograms(mean, S, rng)
    prob = PwlsProblem(K, L, data, S, pcfg.get("alpha", 1.0), (n, n),
                       coupling=coupling or pcfg.get("coupling", "full"),
                       nonneg=pcfg.get("nonneg", False))
    prob.clean_mean = mean
    return prob, clean


def reference_problem(spec):
    """Composite form handed to the reference solver."""
    if isinstance(spec, (PoissonTvProblem, CompositeProblem)):
        return spec
    return build_problem(spec, "pdhg")


def reference_shape(spec, clean):
    if isinstance(spec, PwlsProblem):
        return (spec.L,) + spec.shape
    if isinstance(spec, PoissonTvProblem):
        return spec.shape
    if isinstance(spec, RofProblem):
        return spec.f.shape
    return None


# ---------------------------------------------------------------------------
# solver dispatch
# ---------------------------------------------------------------------------

def solver_config(run, base=None):
    """``SolverConfig`` from a run table; bad values become :class:`ConfigError`."""
    kw = {k: run[k] for k in _CFG_FIELDS if k in run}
    try:
        return (base or SolverConfig()).with_(**kw)
    except InvalidArgumentError as exc:
        raise ConfigError(f"solver {run.get('name')!r}: {exc}") from exc


def _need(spec, cls, name):
    if not isinstance(spec, cls):
        raise ConfigError(f"solver {name!r} needs a {cls.__name__}, got {type(spec).__name__}")


def _splitting_for(spec, name):
    fam = {"pdhgmp": "pdhg", "precond-pdhgmp": "pdhg", "admm": "admm", "ladmm": "admm",
           "split-bregman": "admm", "drs": "drs", "fbs": "fbs", "fista": "fbs"}[name]
    if isinstance(spec, CompositeProblem):
        return spec
    try:
        return build_problem(spec, fam)
    except InvalidArgumentError as exc:
        raise ConfigError(f"solver {name!r}: {exc}") from exc


def check_certificates(spec, run, cfg):
    """Reject step sizes that break a convergence certificate, before any run."""
    if not cfg.certified:
        return
    name = run["name"]
    if name in ("pdhgmp",) and cfg.tau is not None and cfg.sigma is not None:
        comp = _splitting_for(spec, name)
        norm = power_method_norm(comp.A, tol=1e-10, max_iter=5000)
        if not cfg.tau * cfg.sigma * norm**2 < 1:
            raise ConfigError(f"pdhgmp: tau*sigma*|A|^2 = {cfg.tau * cfg.sigma * norm**2:.4g} >= 1")
    if name in ("fbs", "fista") and cfg.eta is not None:
        comp = _splitting_for(spec, name)
        lip = getattr(comp.g, "lipschitz", None)
        limit = 2.0 / lip if name == "fbs" else 1.0 / lip
        if lip and not (cfg.eta < limit if name == "fbs" else cfg.eta <= limit):
            raise ConfigError(f"{name}: eta = {cfg.eta} violates the step bound {limit:.4g}")
    if name == "ladmm" and cfg.tau is not None:
        comp = _splitting_for(spec, name)
        norm = power_method_norm(comp.A, tol=1e-10, max_iter=5000)
        sigma = cfg.sigma if cfg.sigma is not None else cfg.gamma
        if not cfg.tau * sigma * norm**2 < 1:
            raise ConfigError("ladmm: tau*sigma*|A|^2 >= 1")
    if name in ("pidsplit", "fb-em-tv", "fb-em-tv-nes83"):
        _need(spec, PoissonTvProblem, name)


def run_solver(spec, name, cfg):
    """Run one named solver on a problem spec; returns ``(x, record)``."""
    if name in ("pdhgmp", "precond-pdhgmp"):
        comp = _splitting_for(spec, name)
        x, _, rec = run_pdhgmp(comp, cfg.with_(precondition=name == "precond-pdhgmp"))
    elif name == "pidsplit":
        _need(spec, PoissonTvProblem, name)
        x, rec = run_pidsplit(spec, cfg)
    elif name in ("fb-em-tv", "fb-em-tv-nes83"):
        _need(spec, PoissonTvProblem, name)
        x, rec = run_variable_metric_fb(spec, cfg, accelerate=name == "fb-em-tv-nes83")
    elif name == "admm":
        x, _, _, rec = run_admm(_splitting_for(spec, name), cfg)
    elif name == "ladmm":
        x, _, _, rec = run_proximal_admm(_splitting_for(spec, name), cfg)
    elif name == "split-bregman":
        x, _, _, rec = run_split_bregman(_splitting_for(spec, name), cfg)
    elif name == "drs":
        x, rec = _run_drs(_splitting_for(spec, name), cfg)
    elif name == "fbs":
        x, rec = run_proximal_gradient(_splitting_for(spec, name), cfg)
    elif name == "fista":
        x, rec = run_fast_proximal_gradient(_splitting_for(spec, name), cfg)
    else:
        raise ConfigError(f"unknown solver {name!r}")
    return np.asarray(x, dtype=float), rec


def _run_drs(comp, cfg):
    A = comp.A
    if isinstance(A, Identity) or getattr(A, "kind", "") == "identity":
        x, _, rec = run_drs(comp.g, comp.h, cfg, dim=comp.dim, objective=comp.objective)
        return x, rec
    # dual run; the primal is recovered in closed form for a quadratic g
    if not isinstance(comp.g, SquaredL2):
        raise ConfigError("drs with a general operator needs a quadratic data term")
    w, c = comp.g.weight, comp.g.center

    def primal(p):
        return c - A.adjoint(p) / w

    p, _, rec = run_drs(Conjugate(comp.h), DualComposite(comp.g, A), cfg, dim=A.rows,
                        report=primal, objective=comp.objective)
    return primal(p), rec


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")


def _sha256_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def cmd_groundtruth(cfg, out):
    """Compute and store the reference solution plus its provenance sidecar."""
    _ensure_dir(out)
    spec, clean = build_instance(cfg["problem"])
    bench = cfg["bench"]
    solver = bench.get("reference_solver")
    if solver is None:
        solver = "direct" if cfg["problem"]["kind"] == "quadratic" else "precond-pdhgmp"
    prov = {"problem": cfg["problem"], "rng": "numpy-philox4x64"}
    u, _, prov = compute_ground_truth(reference_problem(spec), solver, bench["gt_iters"], prov)
    shape = reference_shape(spec, clean)
    if shape is not None:
        u = u.reshape(shape)
    path = os.path.join(out, GT_IMAGE)
    data = write_image(path, u)
    prov["digest"] = hashlib.sha256(data).hexdigest()
    with open(os.path.join(out, GT_SIDECAR), "w") as fh:
        fh.write(provenance_json(prov) + "\n")
    return u, prov["digest"]


def load_reference(cfg, out):
    """Read the stored reference and check its digest and provenance."""
    path = cfg["bench"].get("reference") or GT_IMAGE
    if not os.path.isabs(path):
        path = os.path.join(out, path)
    sidecar = os.path.splitext(path)[0] + ".json"
    if not os.path.exists(path) or not os.path.exists(sidecar):
        raise ConfigError(f"reference {path} or its sidecar is missing; run groundtruth first")
    with open(sidecar) as fh:
        prov = json.load(fh)
    digest = _sha256_file(path)
    if digest != prov.get("digest"):
        raise DigestMismatchError(f"{path}: digest {digest[:12]} does not match the sidecar")
    if prov.get("problem") != json.loads(provenance_json(cfg["problem"])):
        raise DigestMismatchError("reference was computed for a different problem configuration")
    return read_image(path).ravel()


def _summary_rows(label, rec, epsilons):
    rows = []
    for eps in epsilons:
        hit = rec.first_below(eps)
        reached = hit is not None
        row = hit if reached else rec.last
        idx = [r[0] for r in rec.rows].index(row["iter"]) if row else 0
        rows.append({
            "solver": label, "epsilon": eps, "iters": int(row.get("iter", 0)),
            "fwd_evals": int(row.get("fwd_evals", 0)), "adj_evals": int(row.get("adj_evals", 0)),
            "inner_iters": int(row.get("inner_iters", 0)),
            "elapsed_s": float(rec.wall[idx]) if rec.wall else 0.0, "reached": reached,
        })
    return rows


def _label(run, i):
    return run.get("label") or f"{run['name']}-{i:02d}"


def _one_run(spec, run, cfg, ref, eps_min):
    cfg = cfg.with_(reference=ref, target_eps=eps_min, log_objective=False)
    with threadpool_limits(limits=1):
        return run_solver(spec, run["name"], cfg)


def cmd_bench(cfg, out, threads=1):
    """Run every configured solver against the stored reference.

    Writes one CSV per run, ``summary.json`` and ``summary.txt``; returns the
    summary dict. Divergent or failing runs become ``failures`` entries and
    rows with ``reached = false``; the sweep continues.
    """
    _ensure_dir(out)
    bench = cfg["bench"]
    runs = bench["runs"] or [cfg["solver"]]
    epsilons = [float(e) for e in bench["epsilons"]]
    spec, _ = build_instance(cfg["problem"])
    ref = load_reference(cfg, out)
    base = SolverConfig(tol=0.0, max_iter=5000, record_time=bench.get("record_time", False))
    plans = []
    for i, run in enumerate(runs):
        scfg = solver_config(run, base)
        check_certificates(spec, run, scfg)
        plans.append((_label(run, i), run, scfg))
    labels = [p[0] for p in plans]
    if len(set(labels)) != len(labels):
        raise ConfigError("run labels must be unique")

    def work(plan):
        label, run, scfg = plan
        try:
            _, rec = _one_run(spec, run, scfg, ref, epsilons[-1])
            return label, rec, None
        except Exception as exc:  # recorded, the sweep goes on
            logger.error("run %s failed: %s", label, exc)
            return label, None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, plans))
    else:
        results = [work(p) for p in plans]

    summary = {"runs": [], "failures": []}
    for label, rec, err in results:
        if rec is not None:
            rec.to_csv(os.path.join(out, f"{label}.csv"))
            summary["runs"].extend(_summary_rows(label, rec, epsilons))
            if rec.failed:
                summary["failures"].append({"solver": label, "message": rec.message})
        else:
            summary["failures"].append({"solver": label, "message": err})
            summary["runs"].extend({"solver": label, "epsilon": e, "iters": 0, "fwd_evals": 0,
                                    "adj_evals": 0, "inner_iters": 0, "elapsed_s": 0.0,
                                    "reached": False} for e in epsilons)
    with open(os.path.join(out, SUMMARY_JSON), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(out, SUMMARY_TXT), "w") as fh:
        fh.write(format_table(summary))
    return summary


def format_table(summary):
    head = f"{'solver':<24}{'epsilon':>10}{'iters':>8}{'K':>8}{'K^T':>8}{'inner':>9}{'time[s]':>10}  reached\n"
    lines = [head, "-" * (len(head) - 1) + "\n"]
    for r in summary["runs"]:
        lines.append(f"{r['solver']:<24}{r['epsilon']:>10.3g}{r['iters']:>8d}{r['fwd_evals']:>8d}"
                     f"{r['adj_evals']:>8d}{r['inner_iters']:>9d}{r['elapsed_s']:>10.2f}  "
                     f"{'yes' if r['reached'] else 'no'}\n")
    for f in summary.get("failures", []):
        lines.append(f"FAILED {f['solver']}: {f['message']}\n")
    return "".join(lines)


SINGLE_KINDS = {"denoise": "rof", "lasso": "lasso", "pet": "pet", "pwls": "pwls"}


def cmd_single(command, cfg, out):
    """Convenience wrapper: build the problem, run ``[solver]``, write outputs.

    Writes ``solution.proximg``, ``run.csv`` and ``run.json``; returns the
    solution and the record.
    """
    kind = SINGLE_KINDS[command]
    pcfg = dict(cfg["problem"])
    if pcfg["kind"] != kind:
        raise ConfigError(f"{command} needs problem kind {kind!r}, got {pcfg['kind']!r}")
    _ensure_dir(out)
    spec, clean = build_instance(pcfg)
    run = cfg["solver"]
    scfg = solver_config(run, SolverConfig(log_objective=True))
    check_certificates(spec, run, scfg)
    x, rec = run_solver(spec, run["name"], scfg)
    shape = reference_shape(spec, clean)
    sol = x.reshape(shape) if shape is not None else x
    write_image(os.path.join(out, "solution.proximg"), sol)
    rec.to_csv(os.path.join(out, "run.csv"))
    info = {"solver": run["name"], "iterations": len(rec) - 1, "converged": rec.converged,
            "failed": rec.failed, "message": rec.message}
    if clean is not None:
        info["rel_err_clean"] = float(np.linalg.norm(x - clean.ravel()) / np.linalg.norm(clean))
    with open(os.path.join(out, "run.json"), "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sol, rec


__all__ = [
    "build_instance", "reference_problem", "solver_config", "check_certificates",
    "run_solver", "cmd_groundtruth", "load_reference", "cmd_bench", "format_table",
    "cmd_single", "second_channel_phantom",
]
