"""scikit-learn style wrappers around the solvers.

``LassoRegressor`` fits ``1/2 |X w - y|^2 + lam |w|_1``; ``TVDenoiser``
applies the ROF model image by image; ``PetReconstructor`` reconstructs
Poisson sinograms with a TV prior.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .bench import run_solver
from .exceptions import InvalidArgumentError
from .linops import aslinearoperator
from .problems import LassoProblem, PoissonTvProblem, RofProblem
from .solvers import SolverConfig

_LASSO_SOLVERS = ("fista", "fbs", "admm", "pdhgmp", "drs")
_ROF_SOLVERS = ("pdhgmp", "precond-pdhgmp", "admm", "ladmm", "drs")
_PET_SOLVERS = ("fb-em-tv", "fb-em-tv-nes83", "pidsplit", "pdhgmp", "precond-pdhgmp")


def _choice(value, options, name):
    if value not in options:
        raise InvalidArgumentError(f"{name} must be one of {options}, got {value!r}")


class LassoRegressor(RegressorMixin, BaseEstimator):
    """Least squares with an l1 penalty.

    Unlike :class:`sklearn.linear_model.Lasso` the data term is not divided by
    the number of samples: ``lam`` here equals ``alpha * n_samples`` there.

    Parameters
    ----------
    lam : float
        Weight of the l1 penalty.
    solver : str
        ``"fista"``, ``"fbs"``, ``"admm"``, ``"pdhgmp"`` or ``"drs"``.
    fit_intercept : bool
        Centre ``X`` and ``y`` before fitting and restore the offset.
    max_iter, tol : solver stopping rule.
    """

    def __init__(self, lam=1.0, solver="fista", fit_intercept=False, max_iter=5000, tol=1e-10):
        self.lam = lam
        self.solver = solver
        self.fit_intercept = fit_intercept
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        _choice(self.solver, _LASSO_SOLVERS, "solver")
        if self.fit_intercept:
            x_mean, y_mean = X.mean(axis=0), y.mean()
            X, y = X - x_mean, y - y_mean
        spec = LassoProblem(X, y, self.lam)
        cfg = SolverConfig(max_iter=self.max_iter, tol=self.tol, log_objective=False)
        coef, rec = run_solver(spec, self.solver, cfg)
        self.coef_ = coef
        self.intercept_ = float(y_mean - x_mean @ coef) if self.fit_intercept else 0.0
        self.n_iter_ = len(rec) - 1
        self.convergence_ = rec
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise InvalidArgumentError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_ + self.intercept_


class TVDenoiser(TransformerMixin, BaseEstimator):
    """Total-variation (ROF) denoising of 2-D images.

    ``transform`` accepts one image ``(h, w)`` or a stack ``(k, h, w)``.
    Stateless: ``fit`` only validates parameters.
    """

    def __init__(self, alpha=0.1, solver="pdhgmp", anisotropic=False, max_iter=5000, tol=1e-8):
        self.alpha = alpha
        self.solver = solver
        self.anisotropic = anisotropic
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X=None, y=None):
        _choice(self.solver, _ROF_SOLVERS, "solver")
        if not self.alpha > 0:
            raise InvalidArgumentError("alpha must be positive")
        self.n_iter_ = []
        return self

    def transform(self, X):
        check_is_fitted(self, "n_iter_")
        X = check_array(X, dtype=float, allow_nd=True, ensure_min_samples=1)
        single = X.ndim == 2
        stack = X[None] if single else X
        if stack.ndim != 3:
            raise InvalidArgumentError("expected an image or a stack of images")
        cfg = SolverConfig(max_iter=self.max_iter, tol=self.tol, log_objective=False)
        out = np.empty_like(stack)
        self.n_iter_ = []
        for i, img in enumerate(stack):
            u, rec = run_solver(RofProblem(img, self.alpha, anisotropic=self.anisotropic), self.solver, cfg)
            out[i] = u.reshape(img.shape)
            self.n_iter_.append(len(rec) - 1)
        return out[0] if single else out


class PetReconstructor(BaseEstimator):
    """Poisson-TV reconstruction with a fixed system matrix.

    ``fit(counts)`` reconstructs one sinogram into ``image_``;
    ``transform(counts)`` reconstructs new sinograms without changing the fit;
    ``predict()`` returns the expected counts ``K image_``.
    """

    def __init__(self, K=None, shape=None, alpha=3.0, solver="fb-em-tv", inner_tol=5e-3,
                 max_iter=200, tol=1e-6, eta_damp=1.0, nonneg=True):
        self.K = K
        self.shape = shape
        self.alpha = alpha
        self.solver = solver
        self.inner_tol = inner_tol
        self.max_iter = max_iter
        self.tol = tol
        self.eta_damp = eta_damp
        self.nonneg = nonneg

    def _solve(self, counts):
        _choice(self.solver, _PET_SOLVERS, "solver")
        if self.K is None or self.shape is None:
            raise InvalidArgumentError("K and shape are required")
        counts = check_array(np.asarray(counts, dtype=float).reshape(1, -1), dtype=float).ravel()
        if np.any(counts < 0):
            raise InvalidArgumentError("counts must be nonnegative")
        spec = PoissonTvProblem(self.K, counts, self.alpha, self.shape, nonneg=self.nonneg)
        cfg = SolverConfig(max_iter=self.max_iter, tol=self.tol, inner_tol=self.inner_tol,
                           eta_damp=self.eta_damp, log_objective=False, inner_max_iter=2000)
        u, rec = run_solver(spec, self.solver, cfg)
        return u.reshape(self.shape), rec

    def fit(self, X, y=None):
        self.image_, self.convergence_ = self._solve(X)
        self.n_iter_ = len(self.convergence_) - 1
        return self

    def transform(self, X):
        check_is_fitted(self, "image_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return self._solve(X)[0]
        return np.stack([self._solve(row)[0] for row in X])

    def fit_transform(self, X, y=None):
        return self.fit(X).image_

    def predict(self, X=None):
        check_is_fitted(self, "image_")
        img = self.image_ if X is None else np.asarray(X, dtype=float)
        return aslinearoperator(self.K).apply(img.ravel())


__all__ = ["LassoRegressor", "TVDenoiser", "PetReconstructor"]
