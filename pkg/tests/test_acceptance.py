"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary. Criteria 8 and 11 take a few minutes.
"""
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from threadpoolctl import threadpool_limits

import protocols
from oracles import grid_min_1d, grid_min_2d, lasso_reference
from proxsplit.linops import Identity
from proxsplit.problems import LassoProblem, RofProblem, build_problem, relative_error
from proxsplit.prox import (Abs, Affine, Ball, Box, Halfspace, Huber, L1Norm, Quadratic,
                            Simplex, SquaredL2, moreau_envelope_eval, project_convex,
                            prox_compose_abs, prox_elastic_net, prox_group_l21,
                            prox_matrix_norm, prox_poisson_kl, prox_separable_diag,
                            prox_vector_norm, soft_threshold)
from proxsplit.solvers import (CompositeProblem, Conjugate, DualComposite, SolverConfig,
                               run_admm, run_drs, run_fast_proximal_gradient, run_pdhgmp,
                               run_proximal_admm)

RESULTS = []
_CACHE = {}


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. prox catalog against grid search
# ---------------------------------------------------------------------------

def _penalized(excess, v, weight):
    # exact penalty on the distance-like excess; exact once weight exceeds the multiplier
    return v + weight * np.maximum(excess, 0.0)


def _exact_weight(x, c):
    # for |y - x|^2 and a distance excess the multiplier is 2 dist(x, C) <= 2 |x - c|, c in C
    return 2.0 * np.linalg.norm(x - c) + 1.0


def _case_soft(rng):
    x, lam = rng.normal(0, 2), rng.uniform(0.1, 2)
    got = soft_threshold(np.array([x]), lam)
    ref, _ = grid_min_1d(lambda y: lam * np.abs(y) + (y - x) ** 2 / 2, x - 5, x + 5)
    return got, [ref]


def _case_norm(p):
    def case(rng):
        x, lam = rng.normal(0, 2, 2), rng.uniform(0.1, 2)
        got = prox_vector_norm(x, p, lam)
        norm = {1: lambda a, b: np.abs(a) + np.abs(b), 2: np.hypot,
                np.inf: lambda a, b: np.maximum(np.abs(a), np.abs(b))}[p]
        box = [(x[0] - 5, x[0] + 5), (x[1] - 5, x[1] + 5)]
        ref, _ = grid_min_2d(lambda a, b: lam * norm(a, b) + ((a - x[0]) ** 2 + (b - x[1]) ** 2) / 2, box)
        return got, ref
    return case


def _sq(x):
    return lambda a, b: (a - x[0]) ** 2 + (b - x[1]) ** 2


def _case_box(rng):
    x = rng.normal(0, 2, 2)
    lo = rng.uniform(-2, 0, 2)
    hi = lo + rng.uniform(0.1, 2, 2)
    got = project_convex(x, Box(lo, hi))
    w = 2 * _exact_weight(x, lo)
    ref, _ = grid_min_2d(lambda a, b: _penalized(np.maximum(np.maximum(lo[0] - a, a - hi[0]),
                                                            np.maximum(lo[1] - b, b - hi[1])),
                                                 _sq(x)(a, b), w), [(lo[0] - 1, hi[0] + 1), (lo[1] - 1, hi[1] + 1)])
    return got, ref


def _case_halfspace(rng):
    x, a_, b_ = rng.normal(0, 2, 2), rng.normal(0, 1, 2), rng.normal()
    got = project_convex(x, Halfspace(a_, b_))
    if a_ @ x <= b_:
        box = [(x[0] - 10, x[0] + 10), (x[1] - 10, x[1] + 10)]
        w = _exact_weight(x, a_ * b_ / (a_ @ a_))
        na = np.linalg.norm(a_)
        ref, _ = grid_min_2d(lambda a, b: _penalized((a_[0] * a + a_[1] * b - b_) / na, _sq(x)(a, b), w), box)
        return got, ref
    # from outside, the nearest point lies on the boundary line
    return got, _nearest_on_line(x, a_, b_)


def _nearest_on_line(x, a_, b_):
    y0 = a_ * b_ / (a_ @ a_)
    t = np.array([-a_[1], a_[0]]) / np.linalg.norm(a_)
    s, _ = grid_min_1d(lambda s: ((y0[0] + s * t[0] - x[0]) ** 2 + (y0[1] + s * t[1] - x[1]) ** 2),
                       -20, 20)
    return y0 + s * t


def _case_ball(q):
    def case(rng):
        x, r = rng.normal(0, 2, 2), rng.uniform(0.2, 2)
        got = project_convex(x, Ball(q, r))
        if q == 2 and np.hypot(*x) > r:
            # from outside, the nearest point lies on the circle; the distance is unimodal in the angle
            th, _ = grid_min_1d(lambda th: (r * np.cos(th) - x[0]) ** 2 + (r * np.sin(th) - x[1]) ** 2,
                                -np.pi, np.pi)
            return got, [r * np.cos(th), r * np.sin(th)]
        norm = {1: lambda a, b: np.abs(a) + np.abs(b), 2: np.hypot,
                np.inf: lambda a, b: np.maximum(np.abs(a), np.abs(b))}[q]
        # norm(y) - r under-estimates the distance by at most a factor sqrt(2)
        w = np.sqrt(2) * _exact_weight(x, 0.0)
        ref, _ = grid_min_2d(lambda a, b: _penalized(norm(a, b) - r, _sq(x)(a, b), w),
                             [(-r - 1, r + 1), (-r - 1, r + 1)])
        return got, ref
    return case


def _case_affine(rng):
    x, a_, b_ = rng.normal(0, 2, 2), rng.normal(0, 1, 2), rng.normal()
    got = project_convex(x, Affine(a_[None, :], [b_]))
    return got, _nearest_on_line(x, a_, b_)


def _case_simplex(rng):
    # the 2-simplex is the segment (s, 1 - s), s in [0, 1]
    x = rng.normal(0, 2, 2)
    got = project_convex(x, Simplex())
    s, _ = grid_min_1d(lambda s: np.where((s >= 0) & (s <= 1), (s - x[0]) ** 2 + (1 - s - x[1]) ** 2,
                                          np.inf), 0.0, 1.0)
    return got, [s, 1 - s]


def _case_group(rng):
    x, lam = rng.normal(0, 2, 3), rng.uniform(0.1, 2)
    got = prox_group_l21(x, lam, [[0, 2], [1]])
    box = [(x[0] - 5, x[0] + 5), (x[2] - 5, x[2] + 5)]
    pair, _ = grid_min_2d(lambda a, b: lam * np.hypot(a, b) + ((a - x[0]) ** 2 + (b - x[2]) ** 2) / 2, box)
    single, _ = grid_min_1d(lambda y: lam * np.abs(y) + (y - x[1]) ** 2 / 2, x[1] - 5, x[1] + 5)
    return got, [pair[0], single, pair[1]]


def _case_elastic(rng):
    x, lam, mu = rng.normal(0, 2), rng.uniform(0.1, 2), rng.uniform(0, 2)
    got = prox_elastic_net(np.array([x]), lam, mu)
    ref, _ = grid_min_1d(lambda y: lam * (y**2 / 2 + mu * np.abs(y)) + (y - x) ** 2 / 2, x - 5, x + 5)
    return got, [ref]


def _case_compose(g):
    def case(rng):
        x, lam, mu = rng.normal(0, 2), rng.uniform(0.1, 2), rng.uniform(0, 2)
        got = prox_compose_abs(g, mu, lam, np.array([x]))
        ref, _ = grid_min_1d(lambda y: lam * (g.value(y) + mu * np.abs(y)) + (y - x) ** 2 / 2,
                             x - 5, x + 5)
        return got, [ref]
    return case


def _case_matrix(which):
    # restricted to matrices sharing the singular vectors of X
    def case(rng):
        X, lam = rng.normal(0, 2, (2, 2)), rng.uniform(0.1, 2)
        got = prox_matrix_norm(X, which, lam)
        U, s, Vt = np.linalg.svd(X)
        norm = {"nuclear": lambda a, b: np.abs(a) + np.abs(b), "frobenius": np.hypot,
                "spectral": lambda a, b: np.maximum(np.abs(a), np.abs(b))}[which]
        box = [(-1.0, s[0] + 1), (-1.0, s[1] + 1)]
        t, _ = grid_min_2d(lambda a, b: lam * norm(a, b) + ((a - s[0]) ** 2 + (b - s[1]) ** 2) / 2, box)
        return got.ravel(), ((U * t) @ Vt).ravel()
    return case


def _case_diag(rng):
    x, q, lam = rng.normal(0, 2, 2), rng.uniform(0.2, 3, 2), rng.uniform(0.1, 2)
    got = prox_separable_diag(x, q, lam, Abs())
    ref = [grid_min_1d(lambda y: q[i] / (2 * lam) * (x[i] - y) ** 2 + np.abs(y), x[i] - 5, x[i] + 5)[0]
           for i in range(2)]
    return got, ref


def _case_kl(rng):
    v, t, f = rng.normal(1, 2), rng.uniform(0.1, 2), float(rng.poisson(3))
    got = prox_poisson_kl(np.array([v]), t, np.array([f]))

    def obj(y):
        with np.errstate(divide="ignore", invalid="ignore"):
            val = t * (y - f * np.log(y)) + (y - v) ** 2 / 2
        return np.where(y > 0, val, np.inf) if f > 0 else np.where(y >= 0, t * y + (y - v) ** 2 / 2, np.inf)
    ref, _ = grid_min_1d(obj, 0.0, abs(v) + f + 10)
    return got, [ref]


def _case_envelope(name):
    def case(rng):
        x, lam = rng.normal(0, 2, 2), rng.uniform(0.1, 2)
        val, grad = moreau_envelope_eval(name, lam, x)
        norm = {"l1": lambda a, b: np.abs(a) + np.abs(b), "l2": np.hypot,
                "linf": lambda a, b: np.maximum(np.abs(a), np.abs(b))}[name]
        box = [(x[0] - 5, x[0] + 5), (x[1] - 5, x[1] + 5)]
        y, v = grid_min_2d(lambda a, b: norm(a, b) + ((a - x[0]) ** 2 + (b - x[1]) ** 2) / (2 * lam), box)
        return np.concatenate([[val], grad]), np.concatenate([[v], (x - y) / lam])
    return case


PROX_CASES = {
    "soft_threshold": _case_soft,
    "prox_l1": _case_norm(1), "prox_l2": _case_norm(2), "prox_linf": _case_norm(np.inf),
    "project_box": _case_box, "project_halfspace": _case_halfspace,
    "project_affine": _case_affine, "project_simplex": _case_simplex,
    "project_ball_l1": _case_ball(1), "project_ball_l2": _case_ball(2),
    "project_ball_linf": _case_ball(np.inf),
    "prox_group_l21": _case_group, "prox_elastic_net": _case_elastic,
    "prox_compose_quadratic": _case_compose(Quadratic(1.3)),
    "prox_compose_huber": _case_compose(Huber(0.7)),
    "prox_nuclear": _case_matrix("nuclear"), "prox_frobenius": _case_matrix("frobenius"),
    "prox_spectral": _case_matrix("spectral"),
    "prox_separable_diag": _case_diag, "prox_poisson_kl": _case_kl,
    "moreau_envelope_l1": _case_envelope("l1"), "moreau_envelope_l2": _case_envelope("l2"),
    "moreau_envelope_linf": _case_envelope("linf"),
}


def test_criterion_01_prox_catalog_grid_oracle():
    t0 = time.perf_counter()
    worst = {}
    for name, case in PROX_CASES.items():
        err = 0.0
        for seed in range(50):
            got, ref = case(np.random.default_rng(seed))
            err = max(err, float(np.max(np.abs(np.asarray(got, float) - np.asarray(ref, float)))))
        worst[name] = err
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v <= 1e-6}
    report(1, not bad and elapsed < 60,
           f"{len(PROX_CASES)} operations x 50 instances, max error {max(worst.values()):.2e} "
           f"(tol 1e-6), {elapsed:.1f}s" + (f", failing {sorted(bad)}" if bad else ""))


# ---------------------------------------------------------------------------
# 2. Moreau decomposition and norm/ball identities
# ---------------------------------------------------------------------------

def _l1_ball_bisection(x, r):
    if np.abs(x).sum() <= r:
        return x.copy()
    lo, hi = 0.0, np.abs(x).max()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(np.abs(x) - mid, 0).sum() > r:
            lo = mid
        else:
            hi = mid
    mu = 0.5 * (lo + hi)
    return np.sign(x) * np.maximum(np.abs(x) - mu, 0)


def test_criterion_02_moreau_decomposition():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 33))
        x = rng.normal(0, 3, d)
        lam = rng.uniform(0.05, 3)
        # prox_{lam |.|_p}(x) + lam * Pi_{B_q(1)}(x / lam) = x with an independent projection
        proj = {1: lambda z: np.clip(z, -1, 1),
                2: lambda z: z / max(1.0, np.linalg.norm(z)),
                np.inf: lambda z: _l1_ball_bisection(z, 1.0)}
        for p in (1, 2, np.inf):
            lhs = prox_vector_norm(x, p, lam) + lam * proj[p](x / lam)
            worst = max(worst, np.abs(lhs - x).max() / max(1.0, np.abs(x).max()))
        # generic decomposition through the conjugate for functions with array steps
        for f in (L1Norm(lam), SquaredL2(lam, rng.normal(size=d))):
            s = rng.uniform(0.1, 2)
            lhs = f.prox(x, s) + s * f.prox_conj(x / s, 1.0 / s)
            worst = max(worst, np.abs(lhs - x).max() / max(1.0, np.abs(x).max()))
        # Moreau envelope: value matches the prox objective, gradient is (x - prox)/lam
        val, grad = moreau_envelope_eval("l2", lam, x)
        p2 = prox_vector_norm(x, 2, lam)
        worst = max(worst, abs(val - (np.linalg.norm(p2) + np.sum((x - p2) ** 2) / (2 * lam))),
                    np.abs(grad - (x - p2) / lam).max())
        # matrix version: nuclear prox plus spectral-ball projection
        m = int(rng.integers(1, 6))
        X = rng.normal(0, 2, (m, max(1, d // m)))
        U, s_, Vt = np.linalg.svd(X, full_matrices=False)
        lhs = prox_matrix_norm(X, "nuclear", lam) + (U * np.minimum(s_, lam)) @ Vt
        worst = max(worst, np.abs(lhs - X).max() / max(1.0, np.abs(X).max()))
    report(2, worst <= 1e-10, f"1000 vectors, d <= 32, max relative violation {worst:.2e} (tol 1e-10)")


# ---------------------------------------------------------------------------
# 3. firm nonexpansiveness
# ---------------------------------------------------------------------------

def _fne_ops(rng, d):
    lam = rng.uniform(0.1, 2)
    A = rng.normal(size=(max(1, d // 2), d))
    b = A @ rng.normal(size=d)
    lo = rng.uniform(-2, 0, d)
    groups = [list(range(0, d, 2)), list(range(1, d, 2))] if d > 1 else [[0]]
    q = rng.uniform(0.2, 3, d)
    return {
        "soft_threshold": lambda x: soft_threshold(x, lam),
        "prox_l2": lambda x: prox_vector_norm(x, 2, lam),
        "prox_linf": lambda x: prox_vector_norm(x, np.inf, lam),
        "box": lambda x: project_convex(x, Box(lo, lo + 1.5)),
        "halfspace": lambda x: project_convex(x, Halfspace(A[0], 0.3)),
        "affine": lambda x: project_convex(x, Affine(A, b)),
        "simplex": lambda x: project_convex(x, Simplex()),
        "ball_l1": lambda x: project_convex(x, Ball(1, lam)),
        "ball_l2": lambda x: project_convex(x, Ball(2, lam)),
        "ball_linf": lambda x: project_convex(x, Ball(np.inf, lam)),
        "group_l21": lambda x: prox_group_l21(x, lam, [g for g in groups if g]),
        "elastic_net": lambda x: prox_elastic_net(x, lam, 0.7),
        "compose_huber": lambda x: prox_compose_abs(Huber(0.5), 0.3, lam, x),
        "compose_quadratic": lambda x: prox_compose_abs(Quadratic(2.0), 0.3, lam, x),
        "nuclear": lambda x: prox_matrix_norm(x.reshape(1, -1) if d % 2 else x.reshape(2, -1),
                                              "nuclear", lam).ravel(),
        "spectral": lambda x: prox_matrix_norm(x.reshape(1, -1) if d % 2 else x.reshape(2, -1),
                                               "spectral", lam).ravel(),
        "poisson_kl": lambda x: prox_poisson_kl(x, lam, np.arange(d) % 4),
        "separable_diag": lambda x: prox_separable_diag(x, q, lam, Huber(0.5)),
        "frobenius": lambda x: prox_matrix_norm(x.reshape(1, -1), "frobenius", lam).ravel(),
    }


def test_criterion_03_firm_nonexpansiveness():
    rng = np.random.default_rng(3)
    worst = -np.inf
    names = set()
    for _ in range(1000):
        d = int(rng.integers(1, 17))
        x, y = rng.normal(0, 3, d), rng.normal(0, 3, d)
        for name, T in _fne_ops(rng, d).items():
            names.add(name)
            tx, ty = T(x), T(y)
            gap = float(np.sum((tx - ty) ** 2) - np.dot(x - y, tx - ty))
            worst = max(worst, gap)
    report(3, worst <= 1e-10,
           f"{len(names)} proxes x 1000 pairs, max |Tx-Ty|^2 - <x-y,Tx-Ty> = {worst:.2e} (tol 1e-10)")


# ---------------------------------------------------------------------------
# 4. FISTA rate
# ---------------------------------------------------------------------------

def test_criterion_04_fista_rate():
    rng = np.random.default_rng(4)
    K = rng.normal(size=(30, 20)) / np.sqrt(30)
    b = K @ np.where(rng.random(20) < 0.3, rng.normal(0, 2, 20), 0.0) + 0.05 * rng.normal(size=30)
    lam = 0.05
    x_hat, f_hat = lasso_reference(K, b, lam)
    prob = build_problem(LassoProblem(K, b, lam), "fbs")
    eta = 1.0 / prob.g.lipschitz
    x0 = np.zeros(20)
    _, rec = run_fast_proximal_gradient(prob, SolverConfig(eta=eta, max_iter=500, tol=0.0), x0=x0)
    R = np.sum((x0 - x_hat) ** 2)
    r = rec.column("iter")
    gap = rec.column("objective") - f_hat
    bound = 2 * R / (eta * (r + 2) ** 2)
    ok = len(r) == 501 and bool(np.all(gap <= bound))
    ratio = float(np.max(gap / bound))
    report(4, ok, f"d=20 LASSO, r = 0..{int(r[-1])}, max gap/bound {ratio:.3f}, "
                  f"final gap {gap[-1]:.1e}, support {int(np.sum(x_hat != 0))}")


# ---------------------------------------------------------------------------
# 5. ADMM <-> DRS
# ---------------------------------------------------------------------------

def test_criterion_05_admm_drs_equivalence():
    rng = np.random.default_rng(5)
    K, b = rng.normal(size=(5, 3)), rng.normal(size=5)
    prob = build_problem(LassoProblem(K, b, 0.3), "admm")
    gamma = 1.7
    cfg = SolverConfig(gamma=gamma, max_iter=50, tol=0.0, keep_history=True)
    y0, b0 = rng.normal(size=3), rng.normal(size=3)
    *_, arec = run_admm(prob, cfg, y0=y0, b0=b0)
    _, _, drec = run_drs(Conjugate(prob.h), DualComposite(prob.g, prob.A), cfg.with_(eta=gamma),
                         x0=gamma * b0, t0=gamma * (b0 + y0))
    err = max(max(np.abs(d["t"] - gamma * (a["b"] + a["y"])).max(),
                  np.abs(d["x"] - gamma * a["b"]).max())
              for a, d in zip(arec.history, drec.history))
    n = min(len(arec.history), len(drec.history)) - 1
    report(5, n == 50 and err <= 1e-10,
           f"{n} iterations, max |t - gamma(b+y)|, |p - gamma b| = {err:.2e} (tol 1e-10)")


# ---------------------------------------------------------------------------
# 6. PDHGMp / ADMM coincidence
# ---------------------------------------------------------------------------

def test_criterion_06_pdhgmp_admm_coincidence():
    rng = np.random.default_rng(6)
    f = rng.random((8, 8)).ravel()
    prob = CompositeProblem(SquaredL2(1.0, f), L1Norm(0.2), Identity(64))
    tau = 0.5
    cfg = SolverConfig(gamma=1 / tau, sigma=1 / tau, tau=tau, theta=1.0, certified=False,
                       max_iter=100, tol=0.0, keep_history=True)
    *_, arec = run_admm(prob, cfg)
    _, _, prec = run_pdhgmp(prob, cfg, form="scaled")
    err = max(np.abs(a["x"] - p["x"]).max() for a, p in zip(arec.history, prec.history))
    errb = max(np.abs(a["b"] - p["b"]).max() for a, p in zip(arec.history, prec.history))
    n = min(len(arec.history), len(prec.history)) - 1
    report(6, n == 100 and max(err, errb) <= 1e-10,
           f"8x8 denoising, {n} iterations, max |x_admm - x_pdhg| = {err:.2e}, "
           f"|b_admm - b_pdhg| = {errb:.2e} (tol 1e-10)")


# ---------------------------------------------------------------------------
# 7. cross-solver agreement on ROF
# ---------------------------------------------------------------------------

def test_criterion_07_rof_cross_solver():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    img = np.zeros((32, 32))
    img[8:24, 8:24] = 1
    img[12:20, 4:28] += 0.5
    rof = RofProblem(img + 0.1 * rng.normal(size=img.shape), 0.1)
    tol = 1e-9
    res = {}
    with threadpool_limits(limits=1):
        res["admm"] = run_admm(build_problem(rof, "admm"),
                               SolverConfig(gamma=10, max_iter=20000, tol=tol, log_objective=False))[0]
        res["pdhgmp"] = run_pdhgmp(build_problem(rof, "pdhg"),
                                   SolverConfig(sigma=10.0, max_iter=50000, tol=tol, log_objective=False))[0]
        P = build_problem(rof, "drs")
        p, _, _ = run_drs(Conjugate(P.h), DualComposite(P.g, P.A),
                          SolverConfig(eta=10.0, max_iter=20000, tol=tol, log_objective=False),
                          dim=P.A.rows)
        res["drs"] = rof.f.ravel() - P.A.adjoint(p)
        res["linearized-admm"] = run_proximal_admm(
            build_problem(rof, "pdhg"), SolverConfig(sigma=10.0, max_iter=50000, tol=tol,
                                                     log_objective=False))[0]
    names = list(res)
    worst = max(relative_error(res[a], res[b]) for i, a in enumerate(names) for b in names[i + 1:])
    elapsed = time.perf_counter() - t0
    report(7, worst <= 1e-5 and elapsed < 120,
           f"ROF 32x32 alpha=0.1, {', '.join(names)}: max pairwise relative distance "
           f"{worst:.2e} (tol 1e-5), {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 8. desk-scale PET protocol
# ---------------------------------------------------------------------------

def _pet():
    if "pet" not in _CACHE:
        t0 = time.perf_counter()
        _CACHE["pet"] = protocols.pet_protocol()
        _CACHE["pet_time"] = time.perf_counter() - t0
    return _CACHE["pet"]


@pytest.mark.slow
def test_criterion_08_pet_protocol():
    res = _pet()
    elapsed = _CACHE["pet_time"]
    rows = {(r["solver"], r["epsilon"]): r for r in res["summary"]["runs"]}
    solvers = sorted({s for s, _ in rows})
    all_coarse = all(rows[(s, 0.05)]["reached"] for s in solvers)
    fine = {s: rows[(s, 0.005)]["reached"] for s in ("pidsplit+", "cp-e", "fb-em-tv-d0.005")}
    evals = {s: rows[(s, 0.05)]["fwd_evals"] + rows[(s, 0.05)]["adj_evals"] for s in solvers}
    ordering = evals["fb-em-tv-d0.005"] < evals["cp-e"]
    # loose inner tolerance: a plateau well above where the tight run stops; doubling
    # the iteration count from the midpoint barely improves the best error
    loose = np.loadtxt(res["csv"]["fb-em-tv-d0.1.csv"].decode().splitlines()[1:], delimiter=",")[:, 2]
    tight = np.loadtxt(res["csv"]["fb-em-tv-d0.005.csv"].decode().splitlines()[1:], delimiter=",")[:, 2]
    floor_loose, floor_tight = loose.min(), tight.min()
    half = len(loose) // 2
    gain = 1 - floor_loose / loose[:half + 1].min()
    stagnates = (len(loose) == 1501 and floor_loose > 2 * floor_tight and gain < 0.2
                 and not rows[("fb-em-tv-d0.1", 0.005)]["reached"])
    ok = all_coarse and all(fine.values()) and ordering and stagnates and elapsed < 900
    report(8, ok,
           f"all {len(solvers)} solvers reach 5e-2: {all_coarse}; 5e-3 reached by "
           f"{[s for s, v in fine.items() if v]}; K+K^T evals to 5e-2 FB-EM-TV {evals['fb-em-tv-d0.005']} "
           f"< CP-E {evals['cp-e']}: {ordering}; delta=0.1 floor {floor_loose:.2e} > 2 x delta=0.005 "
           f"floor {floor_tight:.2e}, best error gain over iterations {half}..{len(loose) - 1} {gain:.1%}: {stagnates}; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 9. Bregman semiconvergence
# ---------------------------------------------------------------------------

def _check_bregman(res):
    err = res["err"]
    k = int(np.argmin(err))
    nonmono = 0 < k < len(err) - 1 and err[-1] > 1.01 * err[k] and err[1] < err[0]
    return nonmono and res["stopped_early"] and res["stop_err"] <= 2 * err[k], k


@settings(max_examples=12, deadline=None, derandomize=True,
          suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 2**32 - 1))
def _bregman_property(seed):
    res = protocols.bregman_protocol(seed)
    ok, k = _check_bregman(res)
    _CACHE.setdefault("bregman_ratios", []).append(res["stop_err"] / res["err"][k])
    assert ok, f"seed {seed}: argmin {k}, stop {res['stop']}"


def test_criterion_09_bregman_semiconvergence():
    t0 = time.perf_counter()
    res = protocols.bregman_protocol(0)
    _CACHE["bregman"] = res
    ok, k = _check_bregman(res)
    err = None
    try:
        _bregman_property()
    except AssertionError as exc:
        ok, err = False, str(exc)
    ratios = _CACHE.get("bregman_ratios", [])
    report(9, ok,
           f"d=64 deconvolution, seed 0: min error {res['err'][k]:.3f} at r={k}, discrepancy stop "
           f"r={res['stop']} error {res['stop_err']:.3f}; {len(ratios)} hypothesis seeds, worst "
           f"stop/min ratio {max(ratios) if ratios else float('nan'):.3f} (limit 2)"
           + (f"; {err}" if err else "") + f"; {time.perf_counter() - t0:.0f}s")


# ---------------------------------------------------------------------------
# 10. PWLS coupling benefit
# ---------------------------------------------------------------------------

def _pwls():
    if "pwls" not in _CACHE:
        t0 = time.perf_counter()
        _CACHE["pwls"] = protocols.pwls_protocol()
        _CACHE["pwls_time"] = time.perf_counter() - t0
    return _CACHE["pwls"]


@pytest.mark.slow
def test_criterion_10_pwls_coupling():
    res = _pwls()
    m = protocols.matched_comparison(res)
    elapsed = _CACHE["pwls_time"]
    ok = m["full_err"] < m["diag_err"] and elapsed < 300
    a = res["alpha"]
    report(10, ok,
           f"rho=0.9, diagonal best alpha={a[m['diag_index']]:.3g} err {m['diag_err']:.4f} "
           f"var {np.round(m['diag_var'], 5).tolist()}; full matched alpha={a[m['full_index']]:.3g} "
           f"err {m['full_err']:.4f} var {np.round(m['full_var'], 5).tolist()} "
           f"(log mismatch {m['log_mismatch']:.2f}); {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 11. determinism
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_11_determinism():
    first = {"pet": _pet()["csv"], "bregman": _CACHE.get("bregman") or protocols.bregman_protocol(0),
             "pwls": _pwls()["csv"]}
    first["bregman"] = first["bregman"]["csv"]
    second = {"pet": protocols.pet_protocol()["csv"], "bregman": protocols.bregman_protocol(0)["csv"],
              "pwls": protocols.pwls_protocol()["csv"]}
    diffs = [f"{k}/{name}" for k in first for name in first[k]
             if first[k][name] != second[k].get(name)]
    n = sum(len(v) for v in first.values())
    report(11, not diffs and all(first[k].keys() == second[k].keys() for k in first),
           f"{n} CSV logs from criteria 8-10 compared byte for byte at one thread"
           + (f"; differing: {diffs}" if diffs else ": identical"))
