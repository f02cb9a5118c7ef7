"""Splitting algorithms with a uniform convergence log.

Each ``run_*`` function takes a :class:`CompositeProblem` (or the pieces it
needs) and a :class:`SolverConfig` and returns its iterates together with a
:class:`ConvergenceRecord`. Operator applications go through a
:class:`~proxsplit.linops.CountedOperator`, so the forward/adjoint columns
of the log count exactly what the algorithm itself evaluated; objective and
error logging use the raw operator and are not counted.

Column meaning in the log: ``primal_res`` is ``|Ax - y|`` for split methods
(0 where there is no split variable); ``dual_change`` is the norm of the
change of the dual iterate ``p = gamma * b`` for split methods and of the
primal iterate otherwise.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .exceptions import CertificateError, DimensionError, InvalidArgumentError
from .linops import (CountedOperator, Identity, aslinearoperator, diag_precond_vectors,
                     power_method_norm)
from .prox import KL_FLOOR, Function, GroupL21, LeastSquares, PoissonKL, SquaredL2, Zero

logger = logging.getLogger(__name__)

CSV_HEADER = ("iter", "objective", "rel_err", "primal_res", "dual_change",
              "fwd_evals", "adj_evals", "inner_iters", "elapsed_s")
DENSE_LIMIT = 4096


# ---------------------------------------------------------------------------
# problem, config, record
# ---------------------------------------------------------------------------

class CompositeProblem:
    """``min_x g(x) + h(A x)``.

    ``objective`` defaults to ``g(x) + h(A x)``; problem builders may pass a
    cheaper or more faithful evaluator.
    """

    def __init__(self, g, h, A=None, objective=None, dim=None):
        self.g = g if g is not None else Zero()
        self.h = h if h is not None else Zero()
        if A is None:
            if dim is None:
                raise DimensionError("either A or dim is required")
            A = Identity(dim)
        self.A = aslinearoperator(A)
        self._objective = objective

    @property
    def dim(self):
        return self.A.cols

    def objective(self, x):
        if self._objective is not None:
            return float(self._objective(x))
        return float(self.g(x) + self.h(self.A.apply(x)))

    def __repr__(self):
        return (f"CompositeProblem(g={type(self.g).__name__}, h={type(self.h).__name__}, "
                f"A={self.A!r})")


@dataclass
class SolverConfig:
    """Step sizes, stopping rules and logging switches shared by all solvers.

    ``None`` step sizes are filled with the solver's documented default.
    ``certified`` makes step-size certificates hard errors instead of warnings.
    ``tol = 0`` disables the iterate-change stop so runs last ``max_iter``.
    ``target_eps`` stops a run once the relative error to ``reference``
    falls below it. ``record_time`` writes wall-clock seconds into the log;
    with it off the column is zero and logs are byte-reproducible.
    """

    lam: float = 1.0
    eta: float | None = None
    tau: float | None = None
    sigma: float | None = None
    gamma: float = 1.0
    theta: float = 1.0
    max_iter: int = 500
    tol: float = 1e-8
    inner_tol: float = 1e-3
    inner_decay: float | None = None
    inner_max_iter: int = 1000
    n_inner: int = 2
    precondition: bool = False
    accelerate: bool = False
    eta_damp: float = 1.0
    tau_disc: float = 1.02
    delta_noise: float = 0.0
    certified: bool = True
    reference: np.ndarray | None = None
    target_eps: float | None = None
    log_objective: bool = True
    record_time: bool = False
    keep_history: bool = False
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (np.isfinite(self.tol) and self.tol >= 0):
            raise InvalidArgumentError(f"tol must be nonnegative, got {self.tol}")
        for name in ("lam", "eta", "tau", "sigma", "gamma", "inner_tol"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"{name} must be positive, got {v}")
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidArgumentError(f"theta must lie in [0, 1], got {self.theta}")
        if not 0.0 < self.eta_damp <= 1.0:
            raise InvalidArgumentError(f"eta_damp must lie in (0, 1], got {self.eta_damp}")
        if self.max_iter < 0 or self.inner_max_iter < 1 or self.n_inner < 1:
            raise InvalidArgumentError("iteration limits must be positive")
        if self.inner_decay is not None and not 0.0 < self.inner_decay <= 1.0:
            raise InvalidArgumentError("inner_decay must lie in (0, 1]")
        if self.tau_disc < 1.0:
            raise InvalidArgumentError("tau_disc must be at least 1")
        if self.delta_noise < 0:
            raise InvalidArgumentError("delta_noise must be nonnegative")
        if self.threads < 1:
            raise InvalidArgumentError("threads must be at least 1")
        return self

    def with_(self, **kw):
        return replace(self, **kw)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class ConvergenceRecord:
    """Per-iteration log; rows are tuples in :data:`CSV_HEADER` order."""

    def __init__(self, solver=""):
        self.solver = solver
        self.rows = []
        self.history = []
        self.wall = []
        self.converged = False
        self.failed = False
        self.message = ""

    def append(self, *row):
        if self.rows:
            prev = self.rows[-1]
            if row[0] <= prev[0] or any(row[i] < prev[i] for i in (5, 6, 7)):
                raise RuntimeError("log rows must have increasing iter and monotone counters")
        self.rows.append(tuple(row))

    def column(self, name):
        i = CSV_HEADER.index(name)
        return np.array([r[i] for r in self.rows])

    @property
    def last(self):
        return dict(zip(CSV_HEADER, self.rows[-1])) if self.rows else {}

    def first_below(self, eps):
        """First row whose relative error is ``<= eps``, or ``None``."""
        i = CSV_HEADER.index("rel_err")
        for row in self.rows:
            if np.isfinite(row[i]) and row[i] <= eps:
                return dict(zip(CSV_HEADER, row))
        return None

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def __len__(self):
        return len(self.rows)

    def __repr__(self):
        return f"ConvergenceRecord({self.solver!r}, {len(self.rows)} rows)"


class _Logger:
    """Bookkeeping shared by the solver loops."""

    def __init__(self, name, cfg, prob_objective, counted=()):
        self.rec = ConvergenceRecord(name)
        self.cfg = cfg
        self.objective = prob_objective
        self.counted = list(counted)
        self.inner = 0
        self.t0 = time.perf_counter()
        ref = cfg.reference
        self.ref = None if ref is None else np.asarray(ref, dtype=float).ravel()
        if self.ref is not None and not np.linalg.norm(self.ref) > 0:
            raise InvalidArgumentError("reference must be nonzero")

    def counts(self):
        return (sum(op.n_forward for op in self.counted),
                sum(op.n_adjoint for op in self.counted))

    def rel_err(self, x):
        if self.ref is None:
            return math.nan
        return float(np.linalg.norm(x - self.ref) / np.linalg.norm(self.ref))

    def log(self, r, x, primal_res=0.0, dual_change=0.0, **state):
        obj = self.objective(x) if (self.cfg.log_objective and self.objective) else math.nan
        err = self.rel_err(x)
        fwd, adj = self.counts()
        wall = time.perf_counter() - self.t0
        elapsed = wall if self.cfg.record_time else 0.0
        self.rec.wall.append(wall)
        self.rec.append(int(r), float(obj), err, float(primal_res), float(dual_change),
                        int(fwd), int(adj), int(self.inner), float(elapsed))
        if self.cfg.keep_history:
            snap = {"x": np.array(x, copy=True)}
            snap.update({k: np.array(v, copy=True) for k, v in state.items()})
            self.rec.history.append(snap)
        return err

    def done(self, err, change, scale):
        cfg = self.cfg
        if self.cfg.target_eps is not None and np.isfinite(err) and err <= cfg.target_eps:
            self.rec.converged = True
            self.rec.message = f"relative error {err:.3g} <= {cfg.target_eps}"
            return True
        if not np.isfinite(change):
            self.rec.failed = True
            self.rec.message = "non-finite iterate"
            return True
        if cfg.tol > 0 and change <= cfg.tol * (1.0 + scale):
            self.rec.converged = True
            self.rec.message = "iterate change below tolerance"
            return True
        return False

    def finish(self, r):
        if not self.rec.converged and not self.rec.failed:
            self.rec.message = f"max_iter={r} reached"
        return self.rec


def _start(x0, n):
    if x0 is None:
        return np.zeros(n)
    x0 = np.asarray(x0, dtype=float).ravel().copy()
    if x0.size != n:
        raise DimensionError(f"x0 has length {x0.size}, expected {n}")
    return x0


def _need_prox(f, name):
    if not isinstance(f, Function):
        raise InvalidArgumentError(f"{name} must be a proximable Function, got {type(f).__name__}")


def _is_identity(A):
    return isinstance(A, Identity) or getattr(A, "kind", "") == "identity"


def _check(cond, msg, cfg):
    if cond:
        return
    if cfg.certified:
        raise CertificateError(msg)
    logger.warning("%s (free mode, continuing)", msg)


# ---------------------------------------------------------------------------
# PPA, FBS, FISTA
# ---------------------------------------------------------------------------

def run_ppa(prob, cfg=None, x0=None):
    """Proximal point iteration ``x <- prox_{lam g}(x)``."""
    cfg = cfg or SolverConfig()
    _need_prox(prob.g, "g")
    if not _is_identity(prob.A) or not isinstance(prob.h, Zero):
        raise InvalidArgumentError("PPA needs A = I and h = 0")
    x = _start(x0, prob.dim)
    log = _Logger("ppa", cfg, prob.objective)
    log.log(0, x)
    r = 0
    for r in range(1, cfg.max_iter + 1):
        x_new = prob.g.prox(x, cfg.lam)
        change = float(np.linalg.norm(x_new - x))
        scale = float(np.linalg.norm(x))
        x = x_new
        err = log.log(r, x, dual_change=change)
        if log.done(err, change, scale):
            break
    return x, log.finish(r)


def _smooth_lipschitz(g):
    if not hasattr(g, "grad"):
        raise InvalidArgumentError(f"{type(g).__name__} has no gradient; it cannot be the smooth term")
    L = float(g.lipschitz)
    if not L > 0:
        raise InvalidArgumentError("Lipschitz constant must be positive")
    return L


def run_proximal_gradient(prob, cfg=None, x0=None):
    """Forward-backward splitting ``x <- prox_{eta h}(x - eta grad g(x))``.

    With ``h`` an indicator this is gradient descent with re-projection.
    Default ``eta = 1/L``.
    """
    cfg = cfg or SolverConfig()
    _need_prox(prob.h, "h")
    if not _is_identity(prob.A):
        raise InvalidArgumentError("proximal gradient works on h(x), i.e. A = I")
    L = _smooth_lipschitz(prob.g)
    eta = cfg.eta if cfg.eta is not None else 1.0 / L
    _check(0 < eta < 2.0 / L, f"eta={eta} outside (0, 2/L) with L={L}", cfg)
    x = _start(x0, prob.dim)
    log = _Logger("fbs", cfg, prob.objective)
    log.log(0, x)
    r = 0
    for r in range(1, cfg.max_iter + 1):
        x_new = prob.h.prox(x - eta * prob.g.grad(x), eta)
        change = float(np.linalg.norm(x_new - x))
        scale = float(np.linalg.norm(x))
        x = x_new
        err = log.log(r, x, dual_change=change)
        if log.done(err, change, scale):
            break
    return x, log.finish(r)


def run_fast_proximal_gradient(prob, cfg=None, x0=None):
    """Fast proximal gradient with ``theta_r = 2/(r+2)``.

    Log row ``k`` holds ``x^(k)``; for ``k >= 1`` the objective gap obeys
    ``f(x^(k)) - f* <= 2 |x0 - x*|^2 / (eta (k+1)^2)``.
    """
    cfg = cfg or SolverConfig()
    _need_prox(prob.h, "h")
    if not _is_identity(prob.A):
        raise InvalidArgumentError("fast proximal gradient works on h(x), i.e. A = I")
    L = _smooth_lipschitz(prob.g)
    eta = cfg.eta if cfg.eta is not None else 1.0 / L
    _check(0 < eta <= 1.0 / L * (1 + 1e-12), f"eta={eta} exceeds 1/L with L={L}", cfg)
    x = _start(x0, prob.dim)
    z = x.copy()
    log = _Logger("fista", cfg, prob.objective)
    log.log(0, x, z=z)
    r = 0
    for r in range(0, cfg.max_iter):
        th = 2.0 / (r + 2)
        y = (1 - th) * x + th * z
        x_new = prob.h.prox(y - eta * prob.g.grad(y), eta)
        z = x + (x_new - x) / th
        change = float(np.linalg.norm(x_new - x))
        scale = float(np.linalg.norm(x))
        x = x_new
        err = log.log(r + 1, x, dual_change=change, z=z, y=y)
        if log.done(err, change, scale):
            break
    return x, log.finish(r + 1)


# ---------------------------------------------------------------------------
# ADMM family
# ---------------------------------------------------------------------------

def _quadratic_form(g, n):
    """``(H, c)`` with ``g(x) = 1/2 x'Hx - c'x + const`` for quadratic catalog terms."""
    if isinstance(g, Zero):
        return np.zeros((n, n)), np.zeros(n)
    if isinstance(g, SquaredL2):
        w = float(g.weight)
        return w * np.eye(n), w * np.broadcast_to(g.center, (n,)).astype(float)
    if isinstance(g, LeastSquares):
        return g._gram, g._mtc
    return None


class _XStep:
    """Solver for ``argmin_x g(x) + gamma/2 |A x - v|^2 + 1/2 |x - x_r|^2_R``.

    ``R`` is an optional diagonal (vector). Paths: prox of ``g`` when the
    quadratic part is diagonal; sparse LU when ``g`` has a diagonal Hessian;
    dense Cholesky for other quadratic ``g`` with ``dim <= DENSE_LIMIT``;
    minimum-norm least squares when the system is singular.
    """

    def __init__(self, g, A, gamma, R=None):
        self.g, self.A, self.gamma = g, A, float(gamma)
        self.R = None if R is None else np.asarray(R, dtype=float)
        n = A.cols
        self.mode = None
        if _is_identity(A.op if isinstance(A, CountedOperator) else A):
            diag = self.gamma + (0.0 if self.R is None else self.R)
            if np.ndim(diag) == 0 or g.separable:
                self.mode = "prox"
                self.diag = diag
                return
        quad = _quadratic_form(g, n)
        if quad is None:
            raise InvalidArgumentError(
                f"x-subproblem with g={type(g).__name__} and a general A is not supported; "
                "use the linearized variant")
        H, self.c = quad
        base = A.op if isinstance(A, CountedOperator) else A
        M = base.to_sparse()
        extra = np.zeros(n) if self.R is None else self.R
        if isinstance(g, (Zero, SquaredL2)):
            # diagonal H: keep the system sparse and factor it with SuperLU
            S = (sp.diags(np.diag(H) + extra) + self.gamma * (M.T @ M)).tocsc()
            try:
                self.lu = scipy.sparse.linalg.splu(S)
                probe = self.lu.solve(np.ones(n))
                if not np.all(np.isfinite(probe)):
                    raise RuntimeError("singular")
                self.mode = "splu"
                return
            except RuntimeError:
                pass
            S = S.toarray()
        else:
            Md = M.toarray()
            S = H + self.gamma * (Md.T @ Md) + np.diag(extra)
        if n > DENSE_LIMIT:
            raise InvalidArgumentError(f"dense x-step limited to dim <= {DENSE_LIMIT}")
        self.mode = "chol"
        try:
            self.chol = scipy.linalg.cho_factor(S)
            # a numerically singular system falls through to the min-norm path
            if np.min(np.abs(np.diag(self.chol[0]))) < 1e-10 * max(1.0, np.abs(S).max()) ** 0.5:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            self.mode = "pinv"
            self.pinv = np.linalg.pinv(S, rcond=1e-12, hermitian=True)

    def solve(self, v, x_r=None):
        if self.mode == "prox":
            m = self.gamma * v
            if self.R is not None:
                m = m + self.R * x_r
            m = m / self.diag
            return self.g.prox(m, 1.0 / self.diag)
        rhs = self.c + self.gamma * self.A.adjoint(v)
        if self.R is not None:
            rhs = rhs + self.R * x_r
        if self.mode == "splu":
            return self.lu.solve(rhs)
        if self.mode == "chol":
            return scipy.linalg.cho_solve(self.chol, rhs)
        return self.pinv @ rhs


def run_admm(prob, cfg=None, x0=None, y0=None, b0=None, xstep="exact-dense"):
    """Scaled ADMM.

    ``x <- argmin g(x) + gamma/2 |b + Ax - y|^2``,
    ``y <- prox_{h/gamma}(b + Ax)``, ``b <- b + Ax - y``.

    ``xstep`` is ``"exact-dense"`` or ``("cg", n_inner)``; the CG path needs
    ``g = 0`` and uses warm start with Jacobi preconditioning. Returns
    ``(x, y, b, record)``; the dual iterate is ``gamma * b``.
    """
    cfg = cfg or SolverConfig()
    _need_prox(prob.h, "h")
    gamma = cfg.gamma
    A = CountedOperator(prob.A)
    x = _start(x0, A.cols)
    y = np.zeros(A.rows) if y0 is None else _start(y0, A.rows)
    b = np.zeros(A.rows) if b0 is None else _start(b0, A.rows)
    if xstep == "exact-dense":
        solver = _XStep(prob.g, A, gamma)
        solve = lambda v, x: solver.solve(v)  # noqa: E731
    elif isinstance(xstep, tuple) and xstep[0] == "cg":
        if not isinstance(prob.g, Zero):
            raise InvalidArgumentError("CG x-step supports g = 0 only")
        cg = _NormalCG(A, int(xstep[1]))
        solve = cg.solve
    else:
        raise InvalidArgumentError(f"unknown xstep {xstep!r}")
    log = _Logger("admm", cfg, prob.objective, [A])
    log.log(0, x, y=y, b=b)
    r = 0
    for r in range(1, cfg.max_iter + 1):
        x_new = solve(y - b, x)
        Ax = A.apply(x_new)
        y_old = y
        y = prob.h.prox(b + Ax, 1.0 / gamma)
        res = Ax - y
        b = b + res
        change = float(np.linalg.norm(x_new - x))
        scale = float(np.linalg.norm(x))
        x = x_new
        err = log.log(r, x, float(np.linalg.norm(res)), gamma * float(np.linalg.norm(res)),
                      y=y, b=b)
        if log.done(err, max(change, float(np.linalg.norm(res)), float(np.linalg.norm(y - y_old))),
                    scale):
            break
    return x, y, b, log.finish(r)


class _NormalCG:
    """Warm-started Jacobi-PCG on ``A^T A x = A^T v`` with a fixed step count.

    Keeps ``A x`` cached and updates it linearly, so ``n`` steps cost ``n``
    forward and ``n`` adjoint evaluations: one adjoint for the initial
    residual ``A^T (v - A x)``, one forward plus adjoint per step except the
    last, which needs only ``A p``.
    """

    def __init__(self, A, n):
        self.A, self.n = A, n
        base = A.op if isinstance(A, CountedOperator) else A
        M = base.to_sparse()
        d = np.asarray(M.multiply(M).sum(axis=0)).ravel()
        self.dinv = 1.0 / np.where(d > 0, d, 1.0)
        self.Ax = None
        self._x = None

    def solve(self, v, x):
        A = self.A
        if self.Ax is None or self._x is not x:
            self.Ax = A.apply(x)
        r = A.adjoint(v - self.Ax)
        x = x.copy()
        Ax = self.Ax.copy()
        z = self.dinv * r
        p = z.copy()
        rz = float(r @ z)
        for k in range(self.n):
            if rz == 0.0:
                break
            Ap = A.apply(p)
            pMp = float(Ap @ Ap)
            if pMp == 0.0:
                break
            alpha = rz / pMp
            x += alpha * p
            Ax += alpha * Ap
            if k == self.n - 1:
                break
            r -= alpha * A.adjoint(Ap)
            z = self.dinv * r
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        self.Ax = Ax
        self._x = x
        return x

    def cached_Ax(self):
        return self.Ax


def run_split_bregman(prob, cfg=None, x0=None, y0=None, p0=None, verify=False):
    """Split Bregman in its augmented-Lagrangian form (unscaled multiplier ``p``).

    ``x <- argmin g(x) + <p, Ax> + gamma/2 |Ax - y|^2``,
    ``y <- prox_{h/gamma}(p/gamma + Ax)``, ``p <- p + gamma (Ax - y)``.
    With ``verify=True`` a scaled ADMM run is carried alongside and every
    iterate is checked against it under ``p = gamma b``.
    """
    cfg = cfg or SolverConfig()
    _need_prox(prob.h, "h")
    gamma = cfg.gamma
    A = CountedOperator(prob.A)
    x = _start(x0, A.cols)
    y = np.zeros(A.rows) if y0 is None else _start(y0, A.rows)
    p = np.zeros(A.rows) if p0 is None else _start(p0, A.rows)
    solver = _XStep(prob.g, A, gamma)
    if verify:
        vcfg = cfg.with_(keep_history=True)
        _, _, _, vrec = run_admm(prob, vcfg, x0=x, y0=y, b0=p / gamma)
    log = _Logger("split-bregman", cfg, prob.objective, [A])
    log.log(0, x, y=y, p=p)
    r = 0
    for r in range(1, cfg.max_iter + 1):
        x_new = solver.solve(y - p / gamma)
        Ax = A.apply(x_new)
        y_old = y
        y = prob.h.prox(p / gamma + Ax, 1.0 / gamma)
        res = Ax - y
        p = p + gamma * res
        change = float(np.linalg.norm(x_new - x))
        scale = float(np.linalg.norm(x))
        x = x_new
        if verify and r < len(vrec.history):
            ref = vrec.history[r]
            gap = max(np.abs(x - ref["x"]).max(), np.abs(y - ref["y"]).max(),
                      np.abs(p - gamma * ref["b"]).max())
            if gap > 1e-12 * (1 + np.abs(p).max() + np.abs(x).max()):
                raise AssertionError(f"split Bregman departs from scaled ADMM at iteration {r}: {gap:.3g}")
        err = log.log(r, x, float(np.linalg.norm(res)), gamma * float(np.linalg.norm(res)),
                      y=y, p=p)
        if log.done(err, max(change, float(np.linalg.norm(res)), float(np.linalg.norm(y - y_old))),
                    scale):
            break
    return x, y, p, log.finish(r)


def run_proximal_admm(prob, cfg=None, x0=None, y0=None, b0=None, R_spec="linearized", R=None):
    """ADMM with the extra term ``1/2 |x - x_r|_R^2`` in the x-update.

    ``R_spec="linearized"`` takes ``R = I/tau - sigma A^T A`` with
    ``gamma = sigma``; the x-update is then
    ``prox_{tau g}(x_r - tau sigma A^T (A x_r - y_r + b_r))`` and needs no
    linear solve. ``R_spec="explicit-diag"`` uses the given positive vector
    ``R`` (default ones) with ``cfg.gamma``.
    """
    cfg = cfg or SolverConfig()
    _need_prox(prob.g, "g")
    _need_prox(prob.h, "h")
    A = CountedOperator(prob.A)
    x = _start(x0, A.cols)
    y = np.zeros(A.rows) if y0 is None else _start(y0, A.rows)
    b = np.zeros(A.rows) if b0 is None else _start(b0, A.rows)
    if R_spec == "linearized":
        sigma = cfg.sigma if cfg.sigma is not None else cfg.gamma
        norm = power_method_norm(prob.A, tol=1e-10, max_iter=5000)
        tau = cfg.tau if cfg.tau is not None else 0.99 / (sigma * norm**2)
        # R positive definite is needed for the method to be well defined
        if not tau * sigma * norm**2 < 1:
            raise CertificateError(f"tau={tau} violates tau < 1/|sigma A^T A| = {1 / (sigma * norm**2)}")
        gamma = sigma
        Ax = A.apply(x)
    elif R_spec == "explicit-diag":
        gamma = cfg.gamma
        R = np.ones(A.cols) if R is None else np.asarray(R, dtype=float)
        if R.shape != (A.cols,) or np.any(R <= 0):
            raise InvalidArgumentError("R must be a positive vector of length dim")
        solver = _XStep(prob.g, A, gamma, R)
    else:
        raise InvalidArgumentError(f"unknown R_spec {R_spec!r}")
    log = _Logger(f"prox-admm-{R_spec}", cfg, prob.objective, [A])
    log.log(0, x, y=y, b=b)
    r = 0
    for r in range(1, cfg.max_iter + 1):
        if R_spec == "linearized":
            x_new = prob.g.prox(x - tau * sigma * A.adjoint(Ax - y + b), tau)
        else:
            x_new = solver.solve(y - b, x)
        Ax = A.apply(x_new)
        y_old = y
        y = prob.h.prox(b + Ax, 1.0 / gamma)
        res = Ax - y
        b = b + res
        change = float(np.linalg.norm(x_new - x))
        scale = float(np.linalg.norm(x))
        x = x_new
        err = log.log(r, x, float(np.linalg.norm(res)), gamma * float(np.linalg.norm(res)),
                      y=y, b=b)
        if log.done(err, max(change, float(np.linalg.norm(res)), float(np.linalg.norm(y - y_old))),
                    scale):
            break
    return x, y, b, log.finish(r)


# ---------------------------------------------------------------------------
# Douglas-Rachford
# ---------------------------------------------------------------------------

class Conjugate(Function):
    """Convex conjugate ``f*`` of a catalog function (prox via Moreau)."""

    closed_form_value = False

    def __init__(self, f):
        self.f = f

    @property
    def separable(self):
        return self.f.separable

    def __call__(self, x):
        return math.nan

    def prox(self, x, step):
        return self.f.prox_conj(x, step)

    def prox_conj(self, x, step):
        return self.f.prox(x, step)


class DualComposite(Function):
    """``g* o (-A^T)`` with its prox computed from the ADMM x-subproblem.

    ``prox_{eta g* o (-A^T)}(v) = eta (A p - q)`` with ``q = -v/eta`` and
    ``p = argmin eta/2 |A p - q|^2 + g(p)``.
    """

    closed_form_value = False

    def __init__(self, g, A):
        self.g = g
        self.A = aslinearoperator(A)
        self._solvers = {}

    def __call__(self, x):
        return math.nan

    def prox(self, v, step):
        eta = float(step)
        if eta not in self._solvers:
            self._solvers[eta] = _XStep(self.g, self.A, eta)
        q = -np.asarray(v, dtype=float) / eta
        p = self._solvers[eta].solve(q)
        return eta * (self.A.apply(p) - q)


def run_drs(g, h, cfg=None, x0=None, t0=None, dim=None, report=None, objective=None):
    """Douglas-Rachford: ``t <- prox_{eta h}(2x - t) + t - x``, ``x <- prox_{eta g}(t)``.

    ``report`` maps ``x`` to the iterate that is logged (relative error and
    ``objective``), e.g. the primal image recovered from a dual run.
    Returns ``(x, t, record)``.
    """
    cfg = cfg or SolverConfig()
    _need_prox(g, "g")
    _need_prox(h, "h")
    eta = cfg.eta if cfg.eta is not None else 1.0
    if dim is None:
        for v in (x0, t0):
            if v is not None:
                dim = np.size(v)
                break
    if dim is None:
        raise DimensionError("dim, x0 or t0 is required")
    x = _start(x0, dim)
    t = _start(t0, dim)
    obj = objective
    if obj is None and report is None and g.closed_form_value and h.closed_form_value:
        obj = lambda u: g(u) + h(u)  # noqa: E731
    show = report or (lambda u: u)
    log = _Logger("drs", cfg, obj)
    log.log(0, show(x), t=t)
    r = 0
    for r in range(1, cfg.max_iter + 1):
        t_new = h.prox(2 * x - t, eta) + t - x
        x_new = g.prox(t_new, eta)
        change = float(np.linalg.norm(t_new - t))
        scale = float(np.linalg.norm(t))
        t, x = t_new, x_new
        err = log.log(r, show(x), dual_change=change, t=t)
        if log.done(err, change, scale):
            break
    return x, t, log.finish(r)


# ---------------------------------------------------------------------------
# primal-dual
# ---------------------------------------------------------------------------

def pdhg_steps(A, sigma=None, safety=0.99):
    """Default ``(tau, sigma)`` with ``tau sigma |A|^2 = safety``."""
    norm = power_method_norm(A, tol=1e-10, max_iter=5000)
    if sigma is None:
        sigma = 1.0 / norm
    return safety / (sigma * norm**2), float(sigma), float(norm)


def run_pdhgmp(prob, cfg=None, x0=None, b0=None, y0=None, form="dual"):
    """Primal-dual hybrid gradient with dual extrapolation.

    ``form="scaled"`` follows the ``b`` box literally:
    ``x <- prox_{tau g}(x - tau sigma A^T bbar)``,
    ``y <- prox_{h/sigma}(b + Ax)``, ``b <- b + Ax - y``,
    ``bbar <- b + theta (b - b_old)``.
    ``form="dual"`` runs the equivalent ``p = sigma b`` iteration with
    ``prox_{sigma h*}`` from the Moreau decomposition; it also accepts the
    diagonal preconditioned steps (``cfg.precondition``), ``tau_j = 1/sum_i |A_ij|``,
    ``sigma_i = 1/sum_j |A_ij|``.

    Returns ``(x, p, record)`` with ``p`` the dual iterate.
    """
    cfg = cfg or SolverConfig()
    _need_prox(prob.g, "g")
    _need_prox(prob.h, "h")
    A = CountedOperator(prob.A)
    if cfg.precondition:
        if form != "dual":
            raise InvalidArgumentError("preconditioning runs in the dual form")
        tau, sigma = diag_precond_vectors(prob.A)
        tau = prob.g.harmonize_step(tau)
        sigma = prob.h.harmonize_step(sigma)
    else:
        if cfg.tau is not None and cfg.sigma is not None:
            tau, sigma = cfg.tau, cfg.sigma
            norm = power_method_norm(prob.A, tol=1e-10, max_iter=5000)
        else:
            tau, sigma, norm = pdhg_steps(prob.A, cfg.sigma)
            if cfg.tau is not None:
                tau = cfg.tau
        _check(tau * sigma * norm**2 < 1, f"tau*sigma*|A|^2 = {tau * sigma * norm**2:.6g} >= 1", cfg)
    if cfg.theta != 1.0:
        _check(False, f"theta={cfg.theta} is outside the certified case theta = 1", cfg)
    theta = cfg.theta
    x = _start(x0, A.cols)
    b = np.zeros(A.rows) if b0 is None else _start(b0, A.rows)
    y = np.zeros(A.rows) if y0 is None else _start(y0, A.rows)
    p = sigma * b
    pbar = p.copy()
    bbar = b.copy()
    log = _Logger("pdhgmp-precond" if cfg.precondition else "pdhgmp", cfg, prob.objective, [A])
    log.log(0, x, y=y, b=b, p=p)
    r = 0
    for r in range(1, cfg.max_iter + 1):
        if form == "scaled":
            x_new = prob.g.prox(x - tau * sigma * A.adjoint(bbar), tau)
            Ax = A.apply(x_new)
            y = prob.h.prox(b + Ax, 1.0 / sigma)
            b_old = b
            b = b + Ax - y
            bbar = b + theta * (b - b_old)
            p_new = sigma * b
            res = Ax - y
        else:
            x_new = prob.g.prox(x - tau * A.adjoint(pbar), tau)
            Ax = A.apply(x_new)
            p_new = prob.h.prox_conj(p + sigma * Ax, sigma)
            y = (p - p_new) / sigma + Ax
            res = Ax - y
            pbar = p_new + theta * (p_new - p)
        dchange = float(np.linalg.norm(p_new - p))
        change = float(np.linalg.norm(x_new - x))
        scale = float(np.linalg.norm(x))
        x, p = x_new, p_new
        if form == "dual":
            b = p / sigma
        err = log.log(r, x, float(np.linalg.norm(res)), dchange, y=y, b=b, p=p)
        if log.done(err, max(change, dchange / max(1.0, float(np.linalg.norm(p)))), scale):
            break
    return x, p, log.finish(r)


# ---------------------------------------------------------------------------
# variable-metric forward-backward for Poisson-TV (FB-EM-TV)
# ---------------------------------------------------------------------------

def weighted_tv_prox(v, w, alpha, grad, x0=None, y0=None, delta=1e-3, max_iter=1000,
                     nonneg=True):
    """``argmin_u sum_j w_j/2 (u_j - v_j)^2 + alpha |grad u|_{2,1} (+ i_{u>=0})``.

    Accelerated primal-dual iteration (the primal term is ``min(w)``-strongly
    convex) with warm-startable dual ``y``, stopped when
    ``max(d, p) <= delta`` where
    ``d = |(y_k - y_{k-1})/sigma_{k-1} + grad(x_k - x_{k-1})| / |grad x_k|`` and
    ``p = |x_k - x_{k-1}| / |x_k|``. Returns ``(u, y, iterations)``.
    """
    L = math.sqrt(8.0)
    mu = float(np.min(w))
    tau = 1.0 / L
    sigma = 1.0 / L
    x = v.copy() if x0 is None else x0.copy()
    y = np.zeros(grad.rows) if y0 is None else y0.copy()
    xbar = x.copy()
    ball = GroupL21(alpha)
    gx = grad.apply(x)
    k = 0
    for k in range(1, max_iter + 1):
        y_old, x_old, gx_old = y, x, gx
        y = ball.prox_conj(y + sigma * grad.apply(xbar), sigma)
        u = x - tau * grad.adjoint(y)
        x = (u + tau * w * v) / (1.0 + tau * w)
        if nonneg:
            np.maximum(x, 0.0, out=x)
        th = 1.0 / math.sqrt(1.0 + 2.0 * mu * tau)
        sigma_old = sigma
        tau, sigma = th * tau, sigma / th
        xbar = x + th * (x - x_old)
        gx = grad.apply(x)
        ngx = np.linalg.norm(gx)
        nx = np.linalg.norm(x)
        d = np.linalg.norm((y - y_old) / sigma_old + (gx - gx_old)) / ngx if ngx > 0 else 0.0
        pr = np.linalg.norm(x - x_old) / nx if nx > 0 else 0.0
        if max(d, pr) <= delta:
            break
    return x, y, k


def run_variable_metric_fb(prob, cfg=None, x0=None, accelerate=None):
    """FB-EM-TV: EM gradient step in the metric ``Q = diag(K^T 1 / u)``, then a
    weighted-TV prox in the same metric.

    ``prob`` is a :class:`~proxsplit.problems.PoissonTvProblem`. With
    ``accelerate`` the outer iterates get FISTA momentum with fixed damping
    ``cfg.eta_damp`` (FB-EM-TV-Nes83); the momentum point is floored at the
    KL floor so the EM step stays defined.
    """
    cfg = cfg or SolverConfig()
    accelerate = cfg.accelerate if accelerate is None else accelerate
    K = CountedOperator(prob.K)
    f = prob.counts
    eps = KL_FLOOR
    sens = np.asarray(prob.K.adjoint(np.ones(K.rows)))
    if np.any(sens <= 0):
        raise InvalidArgumentError("every pixel must be seen by at least one ray")
    grad = prob.grad
    n = K.cols
    u = np.full(n, max(f.sum() / sens.sum(), eps)) if x0 is None else _start(x0, n)
    if np.any(u <= 0):
        raise InvalidArgumentError("initial image must be strictly positive")
    eta = cfg.eta_damp
    dual = None
    u_prev = u.copy()
    t_prev = 1.0
    log = _Logger("fb-em-tv-nes83" if accelerate else "fb-em-tv", cfg, prob.objective, [K])
    log.log(0, u)
    r = 0
    for r in range(1, cfg.max_iter + 1):
        if accelerate:
            t = 0.5 * (1 + math.sqrt(1 + 4 * t_prev**2))
            yv = np.maximum(u + ((t_prev - 1) / t) * (u - u_prev), eps)
            t_prev = t
        else:
            yv = u
        yv_pos = np.maximum(yv, eps)
        Ky = K.apply(yv_pos)
        ratio = np.where(f > 0, f / np.maximum(Ky, eps), 0.0)
        u_em = yv_pos / sens * K.adjoint(ratio)
        v = (1 - eta) * yv_pos + eta * u_em
        w = sens / yv_pos
        delta = cfg.inner_tol * (cfg.inner_decay ** (r - 1) if cfg.inner_decay else 1.0)
        u_new, dual, k = weighted_tv_prox(v, w, eta * prob.alpha, grad, y0=dual,
                                          delta=delta, max_iter=cfg.inner_max_iter,
                                          nonneg=prob.nonneg)
        log.inner += k
        change = float(np.linalg.norm(u_new - u))
        scale = float(np.linalg.norm(u))
        u_prev, u = u, u_new
        err = log.log(r, u, dual_change=change)
        if log.done(err, change, scale):
            break
    return u, log.finish(r)


# ---------------------------------------------------------------------------
# PIDSplit+
# ---------------------------------------------------------------------------

def run_pidsplit(prob, cfg=None, x0=None):
    """Three-block ADMM for Poisson-TV with splits ``y1 = Ku``, ``y2 = grad u``, ``y3 = u``.

    The u-update solves ``(K^T K + grad^T grad + I) u = z`` approximately by
    ``cfg.n_inner`` warm-started Jacobi-PCG steps; each outer iteration costs
    exactly ``n_inner`` forward and ``n_inner`` adjoint projections after a
    single setup forward projection. An outer iteration whose normal-equation
    residual is exactly zero skips the CG steps and costs one adjoint; this
    always happens in the first one, since the splits start at ``y = Au``
    with ``b = 0``.
    """
    cfg = cfg or SolverConfig()
    K = CountedOperator(prob.K)
    grad = prob.grad
    n, m = K.cols, K.rows
    g2 = grad.rows
    gamma = cfg.gamma
    kl = PoissonKL(prob.counts)
    tv = GroupL21(prob.alpha)
    u = np.zeros(n) if x0 is None else _start(x0, n)
    b1, b2, b3 = np.zeros(m), np.zeros(g2), np.zeros(n)
    Ku = K.apply(u)
    y1, y2, y3 = Ku.copy(), grad.apply(u), u.copy()
    Kmat = prob.K.to_sparse()
    dK = np.asarray(Kmat.multiply(Kmat).sum(axis=0)).ravel()
    dG = np.asarray(grad.to_sparse().multiply(grad.to_sparse()).sum(axis=0)).ravel()
    dinv = 1.0 / (dK + dG + 1.0)
    log = _Logger("pidsplit+", cfg, prob.objective, [K])
    log.log(0, u)
    r = 0

    def apply_rest(v):
        return grad.adjoint(grad.apply(v)) + v

    for r in range(1, cfg.max_iter + 1):
        u_old = u
        # residual of the normal equations at the warm start
        res = K.adjoint(y1 - b1 - Ku) + grad.adjoint(y2 - b2 - grad.apply(u)) + (y3 - b3 - u)
        u = u.copy()
        Ku = Ku.copy()
        z = dinv * res
        p = z.copy()
        rz = float(res @ z)
        for k in range(cfg.n_inner):
            if rz <= 0.0:
                break
            Kp = K.apply(p)
            Rp = apply_rest(p)
            pMp = float(Kp @ Kp) + float(p @ Rp)
            alpha = rz / pMp
            u += alpha * p
            Ku += alpha * Kp
            if k == cfg.n_inner - 1:
                break
            res -= alpha * (K.adjoint(Kp) + Rp)
            z = dinv * res
            rz_new = float(res @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        gu = grad.apply(u)
        y1 = kl.prox(b1 + Ku, 1.0 / gamma)
        y2 = tv.prox(b2 + gu, 1.0 / gamma)
        y3_old = y3
        y3 = np.maximum(b3 + u, 0.0)
        r1, r2, r3 = Ku - y1, gu - y2, u - y3
        b1, b2, b3 = b1 + r1, b2 + r2, b3 + r3
        pres = math.sqrt(float(r1 @ r1 + r2 @ r2 + r3 @ r3))
        change = float(np.linalg.norm(u - u_old))
        scale = float(np.linalg.norm(u_old))
        out = y3
        err = log.log(r, out, pres, gamma * pres)
        if log.done(err, max(change, pres, float(np.linalg.norm(y3 - y3_old))), scale):
            break
    return y3, log.finish(r)


# ---------------------------------------------------------------------------
# Bregman iteration
# ---------------------------------------------------------------------------

def run_bregman_iteration(g, A, f, mu, cfg=None, inner="admm", inner_cfg=None, x0=None):
    """Bregman iteration with discrepancy stopping.

    ``x_{r+1} = argmin mu/2 |Ax - f_r|^2 + g(x)`` with ``f_r = f + q_r/mu`` and
    ``q_{r+1} = q_r + mu (f - A x_{r+1})``, so ``p_r = A^T q_r`` is a
    subgradient of ``g`` at ``x_r``. Stops at the first ``r`` with
    ``|A x_r - f| <= cfg.tau_disc * cfg.delta_noise`` or at ``cfg.max_iter``.

    ``inner`` chooses the subproblem solver: ``"admm"`` (split ``x = y``,
    needs a dense ``A``) or ``"pdhgmp"``. Returns ``(path, record)`` where
    ``path`` holds every iterate, the data fidelities and the stopping index.
    """
    cfg = cfg or SolverConfig()
    _need_prox(g, "g")
    mu = float(mu)
    if not mu > 0:
        raise InvalidArgumentError("mu must be positive")
    Aop = aslinearoperator(A)
    f = np.asarray(f, dtype=float)
    if f.shape != (Aop.rows,):
        raise DimensionError("f does not match the rows of A")
    icfg = inner_cfg or SolverConfig(max_iter=5000, tol=1e-11, log_objective=False)
    counted = CountedOperator(Aop)
    if inner == "admm":
        M = Aop.to_sparse().toarray()
    elif inner != "pdhgmp":
        raise InvalidArgumentError(f"unknown inner solver {inner!r}")
    x = _start(x0, Aop.cols)
    q = np.zeros(Aop.rows)
    path = {"x": [x.copy()], "fidelity": [float(np.linalg.norm(Aop.apply(x) - f))], "stop": None}
    log = _Logger("bregman", cfg, None, [counted])
    log.log(0, x)
    threshold = cfg.tau_disc * cfg.delta_noise
    r = 0
    for r in range(1, cfg.max_iter + 1):
        fr = f + q / mu
        try:
            if inner == "admm":
                sub = CompositeProblem(LeastSquares(math.sqrt(mu) * M, math.sqrt(mu) * fr), g,
                                       dim=Aop.cols)
                x_new, _, _, rec = run_admm(sub, icfg, x0=x, y0=x)
            else:
                sub = CompositeProblem(g, SquaredL2(mu, fr), counted)
                x_new, _, rec = run_pdhgmp(sub, icfg, x0=x)
        except Exception as exc:
            raise RuntimeError(f"inner solver failed at Bregman iteration {r}: {exc}") from exc
        log.inner += len(rec) - 1
        resid = counted.apply(x_new) - f
        q = q - mu * resid
        fid = float(np.linalg.norm(resid))
        change = float(np.linalg.norm(x_new - x))
        x = x_new
        path["x"].append(x.copy())
        path["fidelity"].append(fid)
        log.log(r, x, primal_res=fid, dual_change=change)
        if cfg.delta_noise > 0 and fid <= threshold:
            path["stop"] = r
            log.rec.converged = True
            log.rec.message = f"discrepancy {fid:.4g} <= {threshold:.4g}"
            break
    if path["stop"] is None:
        path["stop"] = r
    return path, log.finish(r)


__all__ = [
    "CSV_HEADER", "CompositeProblem", "SolverConfig", "ConvergenceRecord",
    "Conjugate", "DualComposite", "pdhg_steps", "weighted_tv_prox",
    "run_ppa", "run_proximal_gradient", "run_fast_proximal_gradient", "run_admm",
    "run_split_bregman", "run_proximal_admm", "run_drs", "run_pdhgmp",
    "run_variable_metric_fb", "run_pidsplit", "run_bregman_iteration",
]
