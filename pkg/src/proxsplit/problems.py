"""Objective models: Poisson-TV (PET), PWLS with block covariance, ROF and LASSO.

``build_problem`` turns a model into the ``(g, h, A)`` triple a solver family
expects; ``objective_eval`` evaluates the model's own objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, InvalidArgumentError
from .linops import Grad2D, Identity, KronIdentity, Stacked, aslinearoperator
from .prox import (KL_FLOOR, BlockSum, Box, Function, GroupL21, Indicator, L1Norm, LeastSquares,
                   PoissonKL, SquaredL2, Zero)
from .solvers import CompositeProblem, weighted_tv_prox


def _finite(x, name):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return x


def _positive(v, name):
    if not (np.isfinite(v) and v > 0):
        raise InvalidArgumentError(f"{name} must be positive, got {v}")
    return float(v)


def tv_value(grad_u, anisotropic=False):
    g = grad_u.reshape(2, -1)
    if anisotropic:
        return float(np.abs(g).sum())
    return float(np.sqrt((g**2).sum(axis=0)).sum())


# ---------------------------------------------------------------------------
# model types
# ---------------------------------------------------------------------------

class PoissonTvProblem:
    """``sum_m (Ku)_m - f_m log (Ku)_m + alpha TV(u)`` over ``u >= 0``.

    ``shape`` is the image shape; the log uses the floor ``KL_FLOOR``.
    """

    def __init__(self, K, counts, alpha, shape, nonneg=True):
        self.K = aslinearoperator(K)
        self.counts = _finite(counts, "counts").ravel()
        if np.any(self.counts < 0):
            raise InvalidArgumentError("counts must be nonnegative")
        if self.counts.size != self.K.rows:
            raise DimensionError("counts do not match the rows of K")
        self.alpha = _positive(alpha, "alpha")
        self.shape = tuple(int(s) for s in shape)
        if self.shape[0] * self.shape[1] != self.K.cols:
            raise DimensionError("image shape does not match the columns of K")
        self.nonneg = bool(nonneg)
        self.grad = Grad2D(*self.shape)

    def data_term(self, Ku):
        return float(np.sum(Ku - self.counts * np.log(np.maximum(Ku, KL_FLOOR))))

    def objective(self, u):
        u = np.asarray(u, dtype=float)
        if self.nonneg and np.any(u < -1e-12):
            return math.inf
        return self.data_term(self.K.apply(u)) + self.alpha * tv_value(self.grad.apply(u))

    def gradient(self, u):
        """Gradient of the data term, ``K^T 1 - K^T (f / Ku)``."""
        Ku = self.K.apply(u)
        return self.K.adjoint(1.0 - self.counts / np.maximum(Ku, KL_FLOOR))

    def em_step(self, u):
        sens = self.K.adjoint(np.ones(self.K.rows))
        Ku = self.K.apply(u)
        return u / sens * self.K.adjoint(np.where(self.counts > 0, self.counts / np.maximum(Ku, KL_FLOOR), 0.0))


class BlockQuadratic(Function):
    """``1/2 (z - f)' W (z - f)`` with ``W`` block diagonal over rays.

    ``z`` stacks ``L`` channels of ``m`` rays (channel-major). ``W`` is given
    per ray as an ``(m, L, L)`` array.
    """

    def __init__(self, W, f):
        self.W = np.asarray(W, dtype=float)
        self.m, self.L = self.W.shape[0], self.W.shape[1]
        self.f = np.asarray(f, dtype=float).ravel()
        if self.f.size != self.m * self.L:
            raise DimensionError("data length does not match W")
        self._cache = {}

    def _rays(self, z):
        return z.reshape(self.L, self.m).T

    def _stack(self, zr):
        return zr.T.ravel()

    def apply_W(self, z):
        return self._stack(np.einsum("mij,mj->mi", self.W, self._rays(z)))

    def __call__(self, z):
        r = np.asarray(z) - self.f
        return 0.5 * float(r @ self.apply_W(r))

    def harmonize_step(self, step):
        """Steps may vary by ray but must agree across the channels of a ray."""
        if np.ndim(step) == 0:
            return step
        s = np.asarray(step, dtype=float).reshape(self.L, self.m).min(axis=0)
        return np.tile(s, self.L)

    def _inverse(self, step):
        key = step if np.ndim(step) == 0 else np.asarray(step).tobytes()
        if key not in self._cache:
            s = np.asarray(step, dtype=float)
            s = s.reshape(self.L, self.m)[0][:, None, None] if s.ndim else s
            self._cache.clear()
            self._cache[key] = np.linalg.inv(np.eye(self.L)[None] + s * self.W)
        return self._cache[key]

    def prox(self, x, step):
        if np.ndim(step) == 0:
            step = float(step)
        rhs = self._rays(np.asarray(x) + step * self.apply_W(self.f))
        return self._stack(np.einsum("mij,mj->mi", self._inverse(step), rhs))


class PwlsProblem:
    """``1/2 |f - (I_L x K) u|^2_{Sigma^-1} + alpha sum_l TV(u_l)``.

    ``sigma_blocks`` has shape ``(L, L, m)``: entry ``[k, l, i]`` is the
    covariance between channels ``k`` and ``l`` on ray ``i``. With
    ``coupling="diagonal"`` the cross-channel blocks are dropped.
    """

    def __init__(self, K, L, data, sigma_blocks, alpha, shape, coupling="full", nonneg=False):
        self.K = aslinearoperator(K)
        self.L = int(L)
        if self.L < 1:
            raise InvalidArgumentError("L must be at least 1")
        self.data = _finite(data, "data").ravel()
        m = self.K.rows
        if self.data.size != self.L * m:
            raise DimensionError("data must stack L sinograms")
        S = _finite(sigma_blocks, "sigma_blocks")
        if S.shape != (self.L, self.L, m):
            raise DimensionError(f"sigma_blocks must have shape {(self.L, self.L, m)}, got {S.shape}")
        if coupling not in ("full", "diagonal"):
            raise InvalidArgumentError("coupling must be 'full' or 'diagonal'")
        self.coupling = coupling
        S = np.transpose(S, (2, 0, 1)).copy()
        if coupling == "diagonal":
            S = S * np.eye(self.L)[None]
        if not np.allclose(S, np.transpose(S, (0, 2, 1)), rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise InvalidArgumentError("covariance blocks must be symmetric")
        self.sigma = S
        try:
            self.chol = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise InvalidArgumentError("covariance is not positive definite") from exc
        eye = np.broadcast_to(np.eye(self.L), S.shape)
        # W = Sigma^-1 per ray from the Cholesky factor
        Linv = np.linalg.solve(self.chol, eye)
        self.W = np.einsum("mki,mkj->mij", Linv, Linv)
        self.alpha = _positive(alpha, "alpha")
        self.shape = tuple(int(s) for s in shape)
        if self.shape[0] * self.shape[1] != self.K.cols:
            raise DimensionError("image shape does not match the columns of K")
        self.nonneg = bool(nonneg)
        self.grad = Grad2D(*self.shape)
        self.KL = KronIdentity(self.K, self.L)
        self.GL = KronIdentity(self.grad, self.L)
        self.quad = BlockQuadratic(self.W, self.data)

    def residual(self, u):
        return self.KL.apply(u) - self.data

    def solve_sigma(self, r):
        """``Sigma^{-1} r`` through the cached per-ray Cholesky factors."""
        rays = r.reshape(self.L, -1).T[..., None]
        y = np.linalg.solve(self.chol, rays)
        x = np.linalg.solve(np.transpose(self.chol, (0, 2, 1)), y)
        return x[..., 0].T.ravel()

    def tv(self, u):
        n = self.K.cols
        return sum(tv_value(self.grad.apply(u[l * n:(l + 1) * n])) for l in range(self.L))

    def objective(self, u):
        u = np.asarray(u, dtype=float)
        if self.nonneg and np.any(u < -1e-12):
            return math.inf
        r = self.residual(u)
        return 0.5 * float(r @ self.solve_sigma(r)) + self.alpha * self.tv(u)


@dataclass
class RofProblem:
    """``1/2 |u - f|^2 + alpha TV(u)`` on an image of ``shape``."""

    f: np.ndarray
    alpha: float
    shape: tuple | None = None
    anisotropic: bool = False

    def __post_init__(self):
        f = _finite(self.f, "f")
        if self.shape is None:
            if f.ndim != 2:
                raise DimensionError("give a 2-D image or an explicit shape")
            self.shape = f.shape
        self.shape = tuple(int(s) for s in self.shape)
        self.f = f.ravel()
        if self.f.size != self.shape[0] * self.shape[1]:
            raise DimensionError("f does not match shape")
        self.alpha = _positive(self.alpha, "alpha")
        self.grad = Grad2D(*self.shape)

    def objective(self, u):
        r = np.asarray(u) - self.f
        return 0.5 * float(r @ r) + self.alpha * tv_value(self.grad.apply(u), self.anisotropic)


@dataclass
class LassoProblem:
    """``1/2 |Kx - b|^2 + lam |x|_1``."""

    K: np.ndarray
    b: np.ndarray
    lam: float

    def __post_init__(self):
        self.K = np.atleast_2d(_finite(self.K, "K"))
        self.b = _finite(self.b, "b").ravel()
        if self.K.shape[0] != self.b.size:
            raise DimensionError("K and b disagree")
        self.lam = _positive(self.lam, "lam")

    def objective(self, x):
        r = self.K @ x - self.b
        return 0.5 * float(r @ r) + self.lam * float(np.abs(x).sum())


# ---------------------------------------------------------------------------
# smooth data term and TV as solver-facing functions
# ---------------------------------------------------------------------------

class PoissonData(Function):
    """KL data term ``u -> sum (Ku) - f log(Ku)`` as the smooth part of FB-EM-TV.

    Its gradient is only locally Lipschitz, so ``lipschitz`` is ``inf``; the
    variable-metric method does not use it.
    """

    closed_form_value = True

    def __init__(self, prob):
        self.prob = prob

    def __call__(self, u):
        return self.prob.data_term(self.prob.K.apply(u))

    def grad(self, u):
        return self.prob.gradient(u)

    lipschitz = math.inf


class TotalVariation(Function):
    """``alpha TV(u) (+ i_{u >= 0})``; prox by the inner primal-dual solver."""

    def __init__(self, alpha, shape, nonneg=False, delta=1e-6, max_iter=5000):
        self.alpha = _positive(alpha, "alpha")
        self.grad = Grad2D(*shape)
        self.nonneg = nonneg
        self.delta, self.max_iter = delta, max_iter

    def __call__(self, u):
        if self.nonneg and np.any(np.asarray(u) < -1e-12):
            return math.inf
        return self.alpha * tv_value(self.grad.apply(u))

    def prox(self, x, step):
        w = np.full(x.size, 1.0 / float(np.min(step)) if np.ndim(step) else 1.0 / step)
        u, _, _ = weighted_tv_prox(np.asarray(x, float), w, self.alpha, self.grad,
                                   delta=self.delta, max_iter=self.max_iter, nonneg=self.nonneg)
        return u


# ---------------------------------------------------------------------------
# builders and metrics
# ---------------------------------------------------------------------------

SPLITTINGS = ("fbs", "admm", "pdhg", "drs", "pidsplit", "fbem")


def build_problem(spec, splitting):
    """``(g, h, A)`` as a :class:`CompositeProblem` for the given solver family.

    ROF: ``pdhg``/``admm``/``drs`` give ``g = 1/2|.-f|^2, h = alpha |.|_{2,1}, A = grad``.
    LASSO: ``fbs``/``admm`` give ``g = 1/2|K.-b|^2, h = lam|.|_1, A = I``;
    ``pdhg`` gives ``g = lam|.|_1, h = 1/2|.-b|^2, A = K``.
    Poisson-TV: ``pdhg`` stacks ``A = (K; grad)``, ``pidsplit`` stacks
    ``A = (K; grad; I)`` with the nonnegativity indicator on the last block,
    ``fbem`` returns the smooth KL term and ``alpha TV + i_{>=0}``.
    PWLS: ``pdhg`` stacks ``A = (I_L x K; I_L x grad)``.
    """
    if splitting not in SPLITTINGS:
        raise InvalidArgumentError(f"unknown splitting {splitting!r}; choose from {SPLITTINGS}")
    bad = InvalidArgumentError(f"splitting {splitting!r} does not apply to {type(spec).__name__}")
    if isinstance(spec, RofProblem):
        if splitting not in ("pdhg", "admm", "drs"):
            raise bad
        n = spec.f.size
        h = L1Norm(spec.alpha) if spec.anisotropic else GroupL21(spec.alpha)
        return CompositeProblem(SquaredL2(1.0, spec.f), h, spec.grad, objective=spec.objective)
    if isinstance(spec, LassoProblem):
        if splitting in ("fbs", "admm", "drs"):
            return CompositeProblem(LeastSquares(spec.K, spec.b), L1Norm(spec.lam),
                                    dim=spec.K.shape[1], objective=spec.objective)
        if splitting == "pdhg":
            return CompositeProblem(L1Norm(spec.lam), SquaredL2(1.0, spec.b), spec.K,
                                    objective=spec.objective)
        raise bad
    if isinstance(spec, PoissonTvProblem):
        m, n = spec.K.rows, spec.K.cols
        kl = PoissonKL(spec.counts)
        tv = GroupL21(spec.alpha)
        if splitting == "pdhg":
            g = Indicator(Box(0.0, np.inf, dim=n)) if spec.nonneg else Zero()
            return CompositeProblem(g, BlockSum([kl, tv], [m, 2 * n]),
                                    Stacked([spec.K, spec.grad]), objective=spec.objective)
        if splitting == "pidsplit":
            blocks = [kl, tv, Indicator(Box(0.0, np.inf, dim=n)) if spec.nonneg else Zero()]
            return CompositeProblem(Zero(), BlockSum(blocks, [m, 2 * n, n]),
                                    Stacked([spec.K, spec.grad, Identity(n)]),
                                    objective=spec.objective)
        if splitting == "fbem":
            return CompositeProblem(PoissonData(spec),
                                    TotalVariation(spec.alpha, spec.shape, spec.nonneg),
                                    dim=n, objective=spec.objective)
        raise bad
    if isinstance(spec, PwlsProblem):
        if splitting != "pdhg":
            raise bad
        n = spec.K.cols
        tv = BlockSum([GroupL21(spec.alpha) for _ in range(spec.L)], [2 * n] * spec.L)
        g = Indicator(Box(0.0, np.inf, dim=spec.L * n)) if spec.nonneg else Zero()
        return CompositeProblem(g, BlockSum([spec.quad, tv], [spec.KL.rows, spec.GL.rows]),
                                Stacked([spec.KL, spec.GL]), objective=spec.objective)
    raise InvalidArgumentError(f"unsupported problem type {type(spec).__name__}")


def objective_eval(prob, x):
    """Objective of a model (``+inf`` outside a flagged nonnegativity domain)."""
    x = np.asarray(x, dtype=float).ravel()
    if hasattr(prob, "objective"):
        return float(prob.objective(x))
    raise InvalidArgumentError(f"{type(prob).__name__} has no objective")


def relative_error(u, u_ref):
    """``|u - u_ref| / |u_ref|`` in the Euclidean norm."""
    u = np.asarray(u, dtype=float).ravel()
    u_ref = np.asarray(u_ref, dtype=float).ravel()
    if u.shape != u_ref.shape:
        raise DimensionError("u and u_ref differ in size")
    nrm = float(np.linalg.norm(u_ref))
    if nrm == 0.0:
        raise InvalidArgumentError("relative error against a zero reference is undefined")
    return float(np.linalg.norm(u - u_ref)) / nrm


def pwls_gradient(prob, u):
    """``(I_L x K)^T Sigma^{-1} ((I_L x K) u - f)``."""
    if not isinstance(prob, PwlsProblem):
        raise InvalidArgumentError("pwls_gradient needs a PwlsProblem")
    u = np.asarray(u, dtype=float).ravel()
    return prob.KL.adjoint(prob.solve_sigma(prob.residual(u)))


__all__ = [
    "PoissonTvProblem", "PwlsProblem", "RofProblem", "LassoProblem", "BlockQuadratic",
    "PoissonData", "TotalVariation", "build_problem", "objective_eval", "relative_error",
    "pwls_gradient", "tv_value",
]
