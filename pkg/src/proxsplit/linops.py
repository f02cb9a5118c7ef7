"""Linear operators with an apply/adjoint contract.

Operators are immutable after construction. ``CountedOperator`` wraps one to
tally forward and adjoint evaluations; the solvers read those counters to
report projector usage.
"""
from __future__ import annotations

import logging
import math
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionError, InvalidArgumentError

logger = logging.getLogger(__name__)

PRECOND_CAP = 1e12


class LinearOperator:
    """Map from ``R^cols`` to ``R^rows``.

    Subclasses implement ``_apply`` and ``_adjoint`` on 1-D float arrays.
    """

    kind = "abstract"

    def __init__(self, rows, cols):
        if rows < 1 or cols < 1:
            raise DimensionError("operator dimensions must be positive")
        self.rows, self.cols = int(rows), int(cols)

    @property
    def shape(self):
        return (self.rows, self.cols)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.cols,):
            raise DimensionError(f"{self.kind}: expected input of length {self.cols}, got {x.shape}")
        return self._apply(x)

    def adjoint(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.rows,):
            raise DimensionError(f"{self.kind}: expected input of length {self.rows}, got {y.shape}")
        return self._adjoint(y)

    __call__ = apply

    def to_sparse(self):
        """Explicit CSR matrix; the default probes with unit vectors."""
        cols = [sp.csr_matrix(self._apply(e).reshape(-1, 1)) for e in np.eye(self.cols)]
        return sp.hstack(cols).tocsr()

    @property
    def T(self):
        return _Adjoint(self)

    def __repr__(self):
        return f"{type(self).__name__}({self.rows}x{self.cols})"


class _Adjoint(LinearOperator):
    kind = "adjoint"

    def __init__(self, op):
        super().__init__(op.cols, op.rows)
        self.op = op

    def _apply(self, x):
        return self.op.adjoint(x)

    def _adjoint(self, y):
        return self.op.apply(y)

    def to_sparse(self):
        return self.op.to_sparse().T.tocsr()

    @property
    def T(self):
        return self.op


class Identity(LinearOperator):
    kind = "identity"

    def __init__(self, n):
        super().__init__(n, n)

    def _apply(self, x):
        return x.copy()

    _adjoint = _apply

    def to_sparse(self):
        return sp.identity(self.rows, format="csr")


class MatrixOperator(LinearOperator):
    """Dense array or scipy sparse matrix."""

    def __init__(self, matrix):
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix, dtype=float)
            self.kind = "sparse-csr"
            if not np.all(np.isfinite(matrix.data)):
                raise InvalidArgumentError("matrix has non-finite entries")
        else:
            matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
            self.kind = "dense"
            if not np.all(np.isfinite(matrix)):
                raise InvalidArgumentError("matrix has non-finite entries")
        super().__init__(*matrix.shape)
        self.matrix = matrix
        self._mt = matrix.T.tocsr() if sp.issparse(matrix) else matrix.T

    def _apply(self, x):
        return np.asarray(self.matrix @ x).ravel()

    def _adjoint(self, y):
        return np.asarray(self._mt @ y).ravel()

    def to_sparse(self):
        return sp.csr_matrix(self.matrix)

    def to_dense(self):
        return self.matrix.toarray() if sp.issparse(self.matrix) else self.matrix.copy()


class Grad2D(LinearOperator):
    """Forward differences on an ``h x w`` image with Neumann boundary.

    Output stacks the vertical differences then the horizontal ones, each in
    row-major order; the last row (column) of each channel is zero. The
    adjoint is the negative discrete divergence.
    """

    kind = "grad2d"

    def __init__(self, h, w):
        if h < 1 or w < 1:
            raise DimensionError("image sides must be positive")
        super().__init__(2 * h * w, h * w)
        self.h, self.w = int(h), int(w)

    def _apply(self, x):
        u = x.reshape(self.h, self.w)
        gv = np.zeros_like(u)
        gh = np.zeros_like(u)
        gv[:-1, :] = u[1:, :] - u[:-1, :]
        gh[:, :-1] = u[:, 1:] - u[:, :-1]
        return np.concatenate([gv.ravel(), gh.ravel()])

    def _adjoint(self, y):
        n = self.h * self.w
        pv = y[:n].reshape(self.h, self.w)
        ph = y[n:].reshape(self.h, self.w)
        out = np.zeros((self.h, self.w))
        out[:-1, :] -= pv[:-1, :]
        out[1:, :] += pv[:-1, :]
        out[:, :-1] -= ph[:, :-1]
        out[:, 1:] += ph[:, :-1]
        return out.ravel()

    def to_sparse(self):
        def diff(n):
            d = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format="lil")
            d[n - 1, n - 1] = 0.0
            return d.tocsr()

        dv = sp.kron(diff(self.h), sp.identity(self.w))
        dh = sp.kron(sp.identity(self.h), diff(self.w))
        return sp.vstack([dv, dh]).tocsr()


class KronIdentity(LinearOperator):
    """``I_L (x) K``: applies ``K`` to each of ``L`` stacked channels."""

    kind = "kron-identity"

    def __init__(self, K, L):
        if L < 1:
            raise DimensionError("L must be at least 1")
        super().__init__(L * K.rows, L * K.cols)
        self.K, self.L = K, int(L)

    def _apply(self, x):
        return np.concatenate([self.K.apply(c) for c in x.reshape(self.L, self.K.cols)])

    def _adjoint(self, y):
        return np.concatenate([self.K.adjoint(c) for c in y.reshape(self.L, self.K.rows)])

    def to_sparse(self):
        return sp.kron(sp.identity(self.L), self.K.to_sparse()).tocsr()


class Stacked(LinearOperator):
    """Vertical stack ``(A_1; A_2; ...)`` of operators sharing a domain."""

    kind = "composite"

    def __init__(self, ops):
        ops = list(ops)
        if not ops:
            raise DimensionError("empty stack")
        cols = {op.cols for op in ops}
        if len(cols) != 1:
            raise DimensionError("stacked operators must share the domain dimension")
        super().__init__(sum(op.rows for op in ops), cols.pop())
        self.ops = ops
        self.bounds = np.concatenate([[0], np.cumsum([op.rows for op in ops])])

    def split(self, y):
        return [y[a:b] for a, b in zip(self.bounds[:-1], self.bounds[1:])]

    def _apply(self, x):
        return np.concatenate([op.apply(x) for op in self.ops])

    def _adjoint(self, y):
        parts = self.split(y)
        out = self.ops[0].adjoint(parts[0])
        for op, part in zip(self.ops[1:], parts[1:]):
            out = out + op.adjoint(part)
        return out

    def to_sparse(self):
        return sp.vstack([op.to_sparse() for op in self.ops]).tocsr()


class CountedOperator(LinearOperator):
    """Pass-through wrapper counting forward and adjoint evaluations."""

    def __init__(self, op):
        super().__init__(op.rows, op.cols)
        self.op = op
        self.kind = op.kind
        self.n_forward = 0
        self.n_adjoint = 0

    def _apply(self, x):
        self.n_forward += 1
        return self.op.apply(x)

    def _adjoint(self, y):
        self.n_adjoint += 1
        return self.op.adjoint(y)

    def to_sparse(self):
        return self.op.to_sparse()

    def reset(self):
        self.n_forward = self.n_adjoint = 0


def aslinearoperator(A):
    if isinstance(A, LinearOperator):
        return A
    return MatrixOperator(A)


# ---------------------------------------------------------------------------
# Radon transform
# ---------------------------------------------------------------------------

class RadonSpec(NamedTuple):
    """Parallel-beam geometry: ``n x n`` unit pixels centred on the origin,
    ``n_angles`` angles uniform on ``[0, pi)`` and ``n_bins`` detector bins
    spanning the image diagonal."""

    n: int
    n_angles: int
    n_bins: int

    @property
    def bin_width(self):
        return math.sqrt(2.0) * self.n / self.n_bins

    def angles(self):
        return np.arange(self.n_angles) * (np.pi / self.n_angles)

    def offsets(self):
        return (np.arange(self.n_bins) - (self.n_bins - 1) / 2.0) * self.bin_width


def _ray_pixels(n, theta, s):
    """Pixel indices and intersection lengths of one line with the pixel grid.

    The line is ``{p : p . (cos t, sin t) = s}``; pixel ``(i, j)`` covers
    ``x in [j - n/2, j + 1 - n/2]``, ``y in [i - n/2, i + 1 - n/2]``.
    """
    c, si = math.cos(theta), math.sin(theta)
    half = n / 2.0
    p0 = np.array([s * c, s * si])
    d = np.array([-si, c])
    edges = np.arange(n + 1) - half
    t_lo, t_hi = -np.inf, np.inf
    ts = []
    for k in range(2):
        if abs(d[k]) < 1e-15:
            if p0[k] < -half or p0[k] > half:
                return np.empty(0, int), np.empty(0)
            continue
        t = (edges - p0[k]) / d[k]
        t_lo = max(t_lo, t.min())
        t_hi = min(t_hi, t.max())
        ts.append(t)
    if not t_hi > t_lo:
        return np.empty(0, int), np.empty(0)
    t_all = np.concatenate(ts + [[t_lo, t_hi]])
    t_all = np.unique(t_all[(t_all >= t_lo) & (t_all <= t_hi)])
    lengths = np.diff(t_all)
    mids = 0.5 * (t_all[:-1] + t_all[1:])
    keep = lengths > 1e-12
    mids, lengths = mids[keep], lengths[keep]
    px = p0[0] + mids * d[0]
    py = p0[1] + mids * d[1]
    j = np.floor(px + half).astype(int)
    i = np.floor(py + half).astype(int)
    ok = (i >= 0) & (i < n) & (j >= 0) & (j < n)
    return (i * n + j)[ok], lengths[ok]


def build_radon(spec: RadonSpec) -> MatrixOperator:
    """Sparse parallel-beam projector with exact pixel-ray intersection lengths.

    Rows are ordered angle-major: row ``a * n_bins + b`` is angle ``a``, bin ``b``.
    """
    spec = RadonSpec(*spec)
    if spec.n < 1 or spec.n_angles < 1 or spec.n_bins < 1:
        raise InvalidArgumentError(f"degenerate Radon geometry {spec}")
    rows, cols, vals = [], [], []
    r = 0
    for theta in spec.angles():
        for s in spec.offsets():
            idx, lens = _ray_pixels(spec.n, theta, s)
            rows.append(np.full(idx.size, r))
            cols.append(idx)
            vals.append(lens)
            r += 1
    m = spec.n_angles * spec.n_bins
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(m, spec.n * spec.n))
    mat.sum_duplicates()
    op = MatrixOperator(mat)
    op.kind = "radon"
    op.spec = spec
    return op


def build_grad2d(h, w) -> Grad2D:
    return Grad2D(h, w)


def build_kron_identity(K, L) -> KronIdentity:
    return KronIdentity(aslinearoperator(K), L)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def dot_test(A, trials=10, seed=0):
    """Largest ``|<Ax, y> - <x, A^T y>| / (1 + |<Ax, y>|)`` over seeded random pairs."""
    A = aslinearoperator(A)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(int(trials)):
        x = rng.standard_normal(A.cols)
        y = rng.standard_normal(A.rows)
        lhs = float(A.apply(x) @ y)
        rhs = float(x @ A.adjoint(y))
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    return worst


class NormEstimate(float):
    """Float carrying the convergence flag of :func:`power_method_norm`."""

    converged: bool
    n_iter: int

    def __new__(cls, value, converged, n_iter):
        obj = super().__new__(cls, value)
        obj.converged = converged
        obj.n_iter = n_iter
        return obj


def power_method_norm(A, tol=1e-10, max_iter=1000, seed=0):
    """Estimate ``|A|_2`` by power iteration on ``A^T A``.

    Returns a :class:`NormEstimate`; when ``max_iter`` runs out the best
    estimate is returned with ``converged = False`` and a warning is logged.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    A = aslinearoperator(A)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.cols)
    x /= np.linalg.norm(x)
    est = 0.0
    for it in range(1, int(max_iter) + 1):
        Ax = A.apply(x)
        new = float(np.linalg.norm(Ax))
        z = A.adjoint(Ax)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return NormEstimate(new, True, it)
        x = z / nz
        # Rayleigh quotient of A^T A at x is |A x|^2; use sqrt(|A^T A x|) as the
        # monotone upper sequence
        cand = math.sqrt(nz)
        if abs(cand - est) <= tol * cand:
            return NormEstimate(cand, True, it)
        est = cand
    logger.warning("power method did not converge in %d iterations", max_iter)
    return NormEstimate(est, False, int(max_iter))


def diag_precond_vectors(A, cap=PRECOND_CAP):
    """Diagonal step sizes ``tau_j = 1/sum_i |A_ij|``, ``sigma_i = 1/sum_j |A_ij|``.

    Zero sums map to ``cap``.
    """
    M = aslinearoperator(A).to_sparse()
    absM = abs(M)
    col = np.asarray(absM.sum(axis=0)).ravel()
    row = np.asarray(absM.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        tau = np.where(col > 0, 1.0 / col, cap)
        sigma = np.where(row > 0, 1.0 / row, cap)
    return np.minimum(tau, cap), np.minimum(sigma, cap)


def export_triplets(A, path):
    """Write the nonzeros of ``A`` as ``row col value`` lines (0-based)."""
    M = aslinearoperator(A).to_sparse().tocoo()
    with open(path, "w") as fh:
        for i, j, v in zip(M.row, M.col, M.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")
