"""Proximal operators, projections and Moreau envelopes.

Two layers live here. The module-level functions (``soft_threshold``,
``project_convex``, ``prox_vector_norm`` ...) are the closed-form catalog and
operate on plain arrays. The ``Function`` subclasses wrap the same formulas
behind a small protocol (value, ``prox``, ``prox_conj``) so the solvers can
stay generic over the nonsmooth term.

Throughout, ``prox(x, step)`` returns ``argmin_y 1/(2 step) |x - y|^2 + f(y)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .exceptions import DimensionError, InfeasibleSetError, InvalidArgumentError

__all__ = [
    "Affine", "Halfspace", "Box", "Simplex", "Ball",
    "Quadratic", "Abs", "Huber",
    "soft_threshold", "project_convex", "prox_vector_norm", "prox_group_l21",
    "prox_elastic_net", "prox_compose_abs", "prox_matrix_norm",
    "moreau_envelope_eval", "prox_separable_diag", "prox_poisson_kl",
    "Function", "Zero", "L1Norm", "L2Norm", "LinfNorm", "GroupL21",
    "Indicator", "SquaredL2", "LeastSquares", "PoissonKL", "BlockSum",
    "ElasticNet",
]

SIMPLEX_TOL = 1e-14
SVD_RTOL = 1e-14
KL_FLOOR = 1e-12


def _vector(x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise DimensionError(f"{name} must be a non-empty 1-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return x


def _positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise InvalidArgumentError(f"{name} must be positive, got {value}")
    return float(value)


# ---------------------------------------------------------------------------
# convex sets
# ---------------------------------------------------------------------------

class Affine:
    """``{y : A y = b}``.

    The least-norm correction ``A^+ (A x - b)`` is computed from a pivoted QR
    of ``A^T`` built once at construction, which also handles rank-deficient
    ``A`` as long as ``b`` lies in the range of ``A``.
    """

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise DimensionError("A and b disagree in the number of rows")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise InvalidArgumentError("A and b must be finite")
        self.A, self.b = A, b
        self.dim = A.shape[1]
        q, r, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        tol = max(A.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
        rank = int(np.sum(diag > tol))
        self._q = q[:, :rank]
        self._r = r[:rank, :rank]
        self._piv = piv
        self._rank = rank
        # consistency of A y = b: b must lie in range(A) = range(A Q)
        if rank < A.shape[0]:
            z = self._least_norm(b)
            if np.linalg.norm(A @ z - b) > 1e-10 * (1.0 + np.linalg.norm(b)):
                raise InfeasibleSetError("affine set {y : Ay = b} is empty")

    def _least_norm(self, r):
        # A^T P = Q R  =>  rows of A permuted: A[piv] = R^T Q^T
        rp = r[self._piv][: self._rank]
        w = scipy.linalg.solve_triangular(self._r, rp, trans="T")
        return self._q @ w

    def project(self, x):
        return x - self._least_norm(self.A @ x - self.b)

    def contains(self, x, tol=1e-10):
        return np.linalg.norm(self.A @ x - self.b) <= tol * (1.0 + np.linalg.norm(self.b))


class Halfspace:
    """``{y : a^T y <= b}``."""

    def __init__(self, a, b):
        self.a = _vector(a, "a")
        self.b = float(b)
        self.dim = self.a.size
        self._nrm2 = float(self.a @ self.a)
        if self._nrm2 == 0.0 and self.b < 0:
            raise InfeasibleSetError("0^T y <= b with b < 0 is empty")

    def project(self, x):
        if self._nrm2 == 0.0:
            return x.copy()
        return x - max(self.a @ x - self.b, 0.0) / self._nrm2 * self.a

    def contains(self, x, tol=1e-12):
        return self.a @ x - self.b <= tol


class Box:
    """``{y : l <= y <= u}`` with extended-real bounds."""

    def __init__(self, lower=0.0, upper=np.inf, dim=None):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise InvalidArgumentError("box bounds must not be NaN")
        if np.any(self.lower > self.upper):
            raise InfeasibleSetError("box requires lower <= upper")
        sizes = {a.size for a in (self.lower, self.upper) if a.ndim > 0}
        if len(sizes) > 1:
            raise DimensionError("box bounds have different lengths")
        self.dim = dim if dim is not None else (sizes.pop() if sizes else None)

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    def contains(self, x, tol=0.0):
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


class Simplex:
    """Probability simplex ``{y >= 0, sum(y) = 1}``."""

    dim = None

    def project(self, x):
        # h(mu) = sum (x - mu)_+ - 1 is a decreasing linear spline in mu,
        # h(max x - 1) >= 0 and h(max x) = -1
        lo, hi = x.max() - 1.0, x.max()
        while hi - lo > SIMPLEX_TOL * max(1.0, abs(hi)):
            mid = 0.5 * (lo + hi)
            if np.sum(np.maximum(x - mid, 0.0)) - 1.0 > 0.0:
                lo = mid
            else:
                hi = mid
            # once no knot separates lo and hi, h is affine on [lo, hi]
            if not np.any((x > lo) & (x < hi)):
                break
        active = x > lo
        mu = (x[active].sum() - 1.0) / active.sum()
        return np.maximum(x - mu, 0.0)

    def contains(self, x, tol=1e-12):
        return bool(np.all(x >= -tol) and abs(x.sum() - 1.0) <= tol)


class Ball:
    """Closed ``l_q`` ball of the given radius, ``q in {1, 2, inf}``."""

    def __init__(self, q, radius=1.0):
        if q not in (1, 2, np.inf):
            raise InvalidArgumentError(f"ball supports q in {{1, 2, inf}}, got {q}")
        self.q = q
        self.radius = _positive(radius, "radius")
        self.dim = None

    def project(self, x):
        lam = self.radius
        if self.q == 2:
            nrm = np.linalg.norm(x)
            return x.copy() if nrm <= lam else lam * x / nrm
        if self.q == np.inf:
            return np.clip(x, -lam, lam)
        return _project_l1_ball(x, lam)

    def contains(self, x, tol=1e-12):
        return np.linalg.norm(x, self.q) <= self.radius * (1 + tol)


def _l1_threshold(x, lam):
    """Threshold ``mu`` with ``|S_mu(x)|_1 = lam``; requires ``|x|_1 > lam``."""
    a = np.abs(x)
    # stable sort keeps ties in original index order
    order = np.argsort(-a, kind="stable")
    s = a[order]
    csum = np.cumsum(s)
    m = np.arange(1, s.size + 1)
    cand = (csum - lam) / m
    ok = (s > 0) & (cand <= s)
    mlast = int(np.nonzero(ok)[0][-1])
    return cand[mlast]


def _project_l1_ball(x, lam):
    if np.abs(x).sum() <= lam:
        return x.copy()
    return soft_threshold(x, _l1_threshold(x, lam))


# ---------------------------------------------------------------------------
# scalar functions for the composition rule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quadratic:
    """``t -> weight/2 * t^2``."""

    weight: float = 1.0

    def value(self, t):
        return 0.5 * self.weight * np.asarray(t) ** 2

    def prox(self, x, lam):
        return x / (1.0 + lam * self.weight)


@dataclass(frozen=True)
class Abs:
    """``t -> |t|``; not differentiable at zero, so not allowed in ``prox_compose_abs``."""

    def value(self, t):
        return np.abs(t)

    def prox(self, x, lam):
        return soft_threshold(x, lam)


@dataclass(frozen=True)
class Huber:
    """Huber function with knee ``delta``: the Moreau envelope of ``|.|`` with parameter ``delta``."""

    delta: float = 1.0

    def value(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        return np.where(t <= self.delta, t**2 / (2 * self.delta), t - self.delta / 2)

    def prox(self, x, lam):
        inside = np.abs(x) <= self.delta + lam
        return np.where(inside, x * self.delta / (self.delta + lam), x - lam * np.sign(x))


_SMOOTH_AT_ZERO = (Quadratic, Huber)


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def soft_threshold(x, lam):
    """Componentwise soft shrinkage ``(x - lam)_+ - (-x - lam)_+``.

    ``lam = 0`` is accepted and returns ``x`` unchanged. ``lam`` may be an
    array broadcastable against ``x``.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("x contains non-finite entries")
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise InvalidArgumentError("threshold must be finite and nonnegative")
    return np.maximum(x - lam, 0.0) - np.maximum(-x - lam, 0.0)


def project_convex(x, set):
    """Orthogonal projection of ``x`` onto a closed convex ``set``."""
    x = _vector(x)
    dim = getattr(set, "dim", None)
    if dim is not None and dim != x.size:
        raise DimensionError(f"set has dimension {dim}, x has length {x.size}")
    return set.project(x)


def _dual_exponent(p):
    return {1: np.inf, 2: 2, np.inf: 1}[p]


def prox_vector_norm(x, p, lam):
    """Prox of ``lam * |.|_p`` for ``p in {1, 2, inf}``, as ``x - Pi_{B_q(lam)}(x)``."""
    x = _vector(x)
    if p not in (1, 2, np.inf):
        raise InvalidArgumentError(f"unsupported p={p}; use 1, 2 or inf")
    lam = _positive(lam, "lam")
    if p == 1:
        return soft_threshold(x, lam)
    return x - Ball(_dual_exponent(p), lam).project(x)


def _check_partition(groups, size):
    seen = np.zeros(size, dtype=int)
    for g in groups:
        g = np.asarray(g, dtype=int)
        if g.size == 0:
            raise InvalidArgumentError("empty group in partition")
        if g.min() < 0 or g.max() >= size:
            raise InvalidArgumentError("group index out of range")
        np.add.at(seen, g, 1)
    if np.any(seen > 1):
        raise InvalidArgumentError("groups overlap")
    if np.any(seen == 0):
        raise InvalidArgumentError("groups do not cover every index")


def prox_group_l21(x, lam, groups: Sequence[Sequence[int]]):
    """Grouped shrinkage: each block ``x_j`` is shrunk towards zero by ``lam`` in norm.

    ``groups`` is a list of 0-based index lists that must partition ``range(len(x))``.
    """
    x = _vector(x)
    lam = _positive(lam, "lam")
    _check_partition(groups, x.size)
    out = np.zeros_like(x)
    for g in groups:
        g = np.asarray(g, dtype=int)
        nrm = np.linalg.norm(x[g])
        if nrm > lam:
            out[g] = x[g] * (1.0 - lam / nrm)
    return out


def prox_elastic_net(x, lam, mu):
    """Prox of ``lam * (1/2 |.|^2 + mu |.|_1)``."""
    x = _vector(x)
    lam = _positive(lam, "lam")
    if mu < 0:
        raise InvalidArgumentError("mu must be nonnegative")
    return soft_threshold(x, lam * mu) / (1.0 + lam)


def prox_compose_abs(g, mu, lam, x):
    """Prox of ``lam * (g + mu |.|)`` for a scalar ``g`` smooth at 0 with ``g'(0) = 0``.

    Evaluated as ``prox_{lam g}(S_{lam mu}(x))`` componentwise.
    """
    if not isinstance(g, _SMOOTH_AT_ZERO):
        raise InvalidArgumentError(
            f"{type(g).__name__} is not in the catalog of scalar functions with g'(0) = 0")
    x = _vector(x)
    lam = _positive(lam, "lam")
    if mu < 0:
        raise InvalidArgumentError("mu must be nonnegative")
    return g.prox(soft_threshold(x, lam * mu), lam)


_MATRIX_NORM_P = {"nuclear": 1, "frobenius": 2, "spectral": np.inf}


def prox_matrix_norm(X, which, lam):
    """Prox of a Schatten norm (nuclear, frobenius, spectral) through the SVD.

    Singular values below ``1e-14 * sigma_max`` are treated as zero.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError("X must be a matrix")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("X contains non-finite entries")
    if which not in _MATRIX_NORM_P:
        raise InvalidArgumentError(f"unknown matrix norm {which!r}")
    lam = _positive(lam, "lam")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros_like(X)
    s = np.where(s < SVD_RTOL * s[0], 0.0, s)
    s_new = prox_vector_norm(s, _MATRIX_NORM_P[which], lam)
    return (U * s_new) @ Vt


def prox_separable_diag(x, q, lam, f):
    """Prox of a separable ``f`` in the metric ``diag(q)``.

    Solves ``argmin_y sum_i q_i/(2 lam) (x_i - y_i)^2 + f_i(y_i)``, i.e. the
    unweighted prox with per-component parameter ``lam / q_i``.
    """
    x = _vector(x)
    q = np.asarray(q, dtype=float)
    if q.shape != x.shape:
        raise DimensionError("q and x must have the same length")
    if np.any(~np.isfinite(q)) or np.any(q <= 0):
        raise InvalidArgumentError("metric weights must be positive")
    lam = _positive(lam, "lam")
    if isinstance(f, (Quadratic, Abs, Huber)):
        return f.prox(x, lam / q)
    if isinstance(f, Function) and f.separable:
        return f.prox(x, lam / q)
    raise InvalidArgumentError(f"{type(f).__name__} is not a separable catalog function")


def prox_poisson_kl(v, t, counts):
    """Prox of ``t * sum(y - f log y)`` (Poisson negative log-likelihood).

    Returns the positive root of ``y^2 - (v - t) y - t f = 0``, computed on the
    branch that avoids cancellation. Where ``f = 0`` this is ``(v - t)_+``.
    """
    v = np.asarray(v, dtype=float)
    f = np.asarray(counts, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or not np.all(np.isfinite(t)):
        raise InvalidArgumentError("t must be positive")
    if np.any(f < 0):
        raise InvalidArgumentError("counts must be nonnegative")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("v contains non-finite entries")
    a = v - t
    s = np.sqrt(a * a + 4.0 * t * f)
    out = np.empty(np.broadcast(a, s).shape)
    pos = a >= 0
    out[pos] = 0.5 * (a + s)[pos]
    # a < 0: y = 2 t f / (s - a) has no cancellation
    neg = ~pos
    num = np.broadcast_to(2.0 * t * f, out.shape)[neg]
    out[neg] = num / (s - a)[neg]
    return out


# ---------------------------------------------------------------------------
# function objects used by the solvers
# ---------------------------------------------------------------------------

class Function:
    """A proper convex lsc function with a computable prox.

    Subclasses implement ``__call__`` and ``prox``; ``prox_conj`` defaults to
    the Moreau decomposition ``prox_{s f*}(x) = x - s prox_{f/s}(x/s)``.
    ``separable`` marks functions whose prox accepts an array-valued step.
    """

    separable = False
    closed_form_value = True

    def __call__(self, x):
        raise NotImplementedError

    def prox(self, x, step):
        raise NotImplementedError

    def prox_conj(self, x, step):
        return x - step * self.prox(x / step, 1.0 / step)

    def harmonize_step(self, step):
        """Reduce a per-component step to one this function's prox supports."""
        if np.ndim(step) == 0 or self.separable:
            return step
        return float(np.min(step))


class Zero(Function):
    separable = True

    def __call__(self, x):
        return 0.0

    def prox(self, x, step):
        return np.array(x, dtype=float, copy=True)


@dataclass
class L1Norm(Function):
    weight: float = 1.0
    separable = True

    def __call__(self, x):
        return self.weight * float(np.abs(x).sum())

    def prox(self, x, step):
        return soft_threshold(x, self.weight * np.asarray(step))


@dataclass
class L2Norm(Function):
    weight: float = 1.0

    def __call__(self, x):
        return self.weight * float(np.linalg.norm(x))

    def prox(self, x, step):
        return prox_vector_norm(x, 2, self.weight * float(step))


@dataclass
class LinfNorm(Function):
    weight: float = 1.0

    def __call__(self, x):
        return self.weight * float(np.abs(x).max())

    def prox(self, x, step):
        return prox_vector_norm(x, np.inf, self.weight * float(step))


@dataclass
class ElasticNet(Function):
    """``weight * (1/2 |x|^2 + mu |x|_1)``."""

    mu: float = 1.0
    weight: float = 1.0
    separable = True

    def __call__(self, x):
        return self.weight * (0.5 * float(x @ x) + self.mu * float(np.abs(x).sum()))

    def prox(self, x, step):
        lam = self.weight * np.asarray(step)
        return soft_threshold(x, lam * self.mu) / (1.0 + lam)


@dataclass
class GroupL21(Function):
    """``weight * sum_j |x_j|_2`` where ``x`` stacks ``group_size`` channels.

    Entry ``i`` of every channel belongs to group ``i``; this is the layout of
    a stacked image gradient, which makes the isotropic TV ``|grad u|_{2,1}``.
    """

    weight: float = 1.0
    group_size: int = 2

    def _blocks(self, x):
        return np.asarray(x, dtype=float).reshape(self.group_size, -1)

    def __call__(self, x):
        return self.weight * float(np.sqrt((self._blocks(x) ** 2).sum(axis=0)).sum())

    def prox(self, x, step):
        xb = self._blocks(x)
        lam = self.weight * np.asarray(step, dtype=float)
        if lam.ndim:
            lam = lam.reshape(self.group_size, -1)[0]
        nrm = np.sqrt((xb**2).sum(axis=0))
        scale = np.zeros_like(nrm)
        big = nrm > lam
        scale[big] = 1.0 - (np.broadcast_to(lam, nrm.shape)[big] / nrm[big])
        return (xb * scale).ravel()

    def harmonize_step(self, step):
        if np.ndim(step) == 0:
            return step
        s = np.asarray(step, dtype=float).reshape(self.group_size, -1).min(axis=0)
        return np.tile(s, self.group_size)


@dataclass
class Indicator(Function):
    """Indicator of a convex set; its prox is the projection for any step."""

    set: object = None

    @property
    def separable(self):
        return isinstance(self.set, Box)

    def __call__(self, x):
        return 0.0 if self.set.contains(x, 1e-9) else np.inf

    def prox(self, x, step):
        return self.set.project(np.asarray(x, dtype=float))


@dataclass
class SquaredL2(Function):
    """``weight/2 * |x - center|^2``."""

    weight: float = 1.0
    center: np.ndarray | float = 0.0
    separable = True

    def __call__(self, x):
        r = x - self.center
        return 0.5 * self.weight * float(r @ r)

    def prox(self, x, step):
        ws = self.weight * np.asarray(step)
        return (x + ws * self.center) / (1.0 + ws)

    def grad(self, x):
        return self.weight * (x - self.center)

    @property
    def lipschitz(self):
        return self.weight


class LeastSquares(Function):
    """``1/2 |M x - c|^2`` with a dense matrix ``M``.

    Serves both as a smooth term (``grad``, ``lipschitz``) and as a proximable
    one; prox factorizations are cached per step.
    """

    def __init__(self, M, c):
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        self.c = np.asarray(c, dtype=float).ravel()
        if self.M.shape[0] != self.c.size:
            raise DimensionError("M and c disagree in the number of rows")
        self._gram = self.M.T @ self.M
        self._mtc = self.M.T @ self.c
        self._chol = {}

    def __call__(self, x):
        r = self.M @ x - self.c
        return 0.5 * float(r @ r)

    def grad(self, x):
        return self.M.T @ (self.M @ x - self.c)

    @property
    def lipschitz(self):
        return float(np.linalg.norm(self.M, 2) ** 2)

    def prox(self, x, step):
        step = float(step)
        if step not in self._chol:
            n = self._gram.shape[0]
            self._chol[step] = scipy.linalg.cho_factor(step * self._gram + np.eye(n))
        return scipy.linalg.cho_solve(self._chol[step], x + step * self._mtc)


class PoissonKL(Function):
    """``sum_m y_m - f_m log y_m`` on ``y > 0`` (``+inf`` outside the domain).

    The value uses the floor ``max(y, eps)`` inside the logarithm, matching the
    objective evaluators elsewhere.
    """

    separable = True

    def __init__(self, counts, eps=KL_FLOOR):
        self.counts = np.asarray(counts, dtype=float)
        if np.any(self.counts < 0):
            raise InvalidArgumentError("counts must be nonnegative")
        self.eps = eps

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any((y == 0) & (self.counts > 0)):
            return np.inf
        return float(np.sum(y - self.counts * np.log(np.maximum(y, self.eps))))

    def prox(self, x, step):
        return prox_poisson_kl(x, step, self.counts)


class BlockSum(Function):
    """Separable sum ``sum_k f_k(y_k)`` over consecutive slices of ``y``."""

    def __init__(self, blocks, sizes):
        if len(blocks) != len(sizes):
            raise DimensionError("one size per block required")
        self.blocks = list(blocks)
        self.sizes = [int(s) for s in sizes]
        self._bounds = np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def separable(self):
        return all(b.separable for b in self.blocks)

    def split(self, y):
        return [y[a:b] for a, b in zip(self._bounds[:-1], self._bounds[1:])]

    def _steps(self, step):
        if np.ndim(step) == 0:
            return [step] * len(self.blocks)
        return self.split(np.asarray(step))

    def __call__(self, y):
        return float(sum(f(part) for f, part in zip(self.blocks, self.split(y))))

    def prox(self, y, step):
        return np.concatenate([f.prox(part, s) for f, part, s
                               in zip(self.blocks, self.split(y), self._steps(step))])

    def prox_conj(self, y, step):
        return np.concatenate([f.prox_conj(part, s) for f, part, s
                               in zip(self.blocks, self.split(y), self._steps(step))])

    def harmonize_step(self, step):
        if np.ndim(step) == 0:
            return step
        parts = [np.broadcast_to(f.harmonize_step(s), (n,))
                 for f, s, n in zip(self.blocks, self._steps(step), self.sizes)]
        return np.concatenate(parts)


def moreau_envelope_eval(f, lam, x):
    """Value and gradient of the Moreau envelope of ``f`` with parameter ``lam``.

    ``f`` is one of ``"l1"``, ``"l2"``, ``"linf"``, a :class:`Box`/:class:`Ball`/
    other set (taken as its indicator), or a catalog :class:`Function`.
    """
    x = _vector(x)
    lam = _positive(lam, "lam")
    named = {"l1": L1Norm(), "l2": L2Norm(), "linf": LinfNorm()}
    if isinstance(f, str):
        if f not in named:
            raise InvalidArgumentError(f"unknown catalog function {f!r}")
        f = named[f]
    elif not isinstance(f, Function) and hasattr(f, "project"):
        f = Indicator(f)
    if not isinstance(f, (L1Norm, L2Norm, LinfNorm, Indicator)):
        raise InvalidArgumentError("Moreau envelope supports only l1, l2, linf and set indicators")
    p = f.prox(x, lam)
    r = x - p
    fp = 0.0 if isinstance(f, Indicator) else f(p)
    return float(r @ r) / (2 * lam) + fp, r / lam
