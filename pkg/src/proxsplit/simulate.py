"""Deterministic synthetic data: ellipse phantoms, Poisson and correlated
Gaussian sinograms, and long-run reference solutions.

Randomness comes from ``numpy.random.Generator`` over the counter-based
Philox bit generator, seeded explicitly; numpy's Poisson sampler uses
inversion below rate 10 and PTRS rejection above.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import InvalidArgumentError
from .io import image_bytes
from .linops import aslinearoperator
from .problems import PoissonTvProblem, build_problem
from .solvers import SolverConfig, run_pdhgmp

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy-philox4x64"


def make_rng(seed):
    """Seeded counter-based generator; the same seed gives the same stream everywhere."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise InvalidArgumentError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in unit-square coordinates ``[-1, 1]^2`` (x right, y down)."""

    center: tuple = (0.0, 0.0)
    axes: tuple = (0.5, 0.5)
    angle: float = 0.0
    intensity: float = 1.0


@dataclass
class PhantomSpec:
    n: int
    shapes: list = field(default_factory=list)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgumentError("phantom side must be positive")
        self.shapes = [s if isinstance(s, Ellipse) else Ellipse(**s) for s in self.shapes]


def default_phantom_spec(n=64):
    """A simple object: a body ellipse with a few hot and cold inserts."""
    return PhantomSpec(n, [
        Ellipse((0.0, 0.0), (0.72, 0.9), 0.0, 1.0),
        Ellipse((-0.25, -0.3), (0.18, 0.25), 0.3, 1.5),
        Ellipse((0.3, 0.25), (0.2, 0.14), -0.4, 2.0),
        Ellipse((0.05, 0.45), (0.1, 0.1), 0.0, -0.6),
        Ellipse((0.25, -0.4), (0.07, 0.07), 0.0, 3.0),
    ])


def make_phantom(spec):
    """Sum of ellipse indicators sampled at pixel centres; clipped at zero."""
    if not isinstance(spec, PhantomSpec):
        spec = PhantomSpec(**spec)
    n = spec.n
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    X, Y = np.meshgrid(c, c)
    img = np.zeros((n, n))
    for e in spec.shapes:
        ca, sa = math.cos(e.angle), math.sin(e.angle)
        dx, dy = X - e.center[0], Y - e.center[1]
        u = (ca * dx + sa * dy) / e.axes[0]
        v = (-sa * dx + ca * dy) / e.axes[1]
        img[u * u + v * v <= 1.0] += e.intensity
    return np.maximum(img, 0.0)


def simulate_poisson_sinogram(K, image, total_counts_target, rng):
    """Poisson counts with mean ``c K image``, ``c`` set so the mean total is the target.

    Returns ``(counts, scale)``.
    """
    K = aslinearoperator(K)
    image = np.asarray(image, dtype=float).ravel()
    if np.any(image < 0):
        raise InvalidArgumentError("image must be nonnegative")
    if not total_counts_target > 0:
        raise InvalidArgumentError("total_counts_target must be positive")
    mean = K.apply(image)
    total = float(mean.sum())
    if total == 0.0:
        if not image.any():
            return np.zeros(K.rows), 0.0
        raise InvalidArgumentError("forward projection is zero but a positive total was requested")
    scale = total_counts_target / total
    return rng.poisson(scale * mean).astype(float), scale


def simulate_correlated_sinograms(mean, sigma_blocks, rng):
    """Per-ray ``L``-variate Gaussian draws ``mean + C z`` with ``C C' = Sigma``.

    ``mean`` stacks ``L`` channels of ``m`` rays; ``sigma_blocks`` has shape
    ``(L, L, m)``.
    """
    S = np.asarray(sigma_blocks, dtype=float)
    L, _, m = S.shape
    mean = np.asarray(mean, dtype=float).ravel()
    if mean.size != L * m:
        raise InvalidArgumentError("mean must stack L sinograms of m rays")
    try:
        C = np.linalg.cholesky(np.transpose(S, (2, 0, 1)))
    except np.linalg.LinAlgError as exc:
        raise InvalidArgumentError("a covariance block is not positive definite") from exc
    z = rng.standard_normal((m, L))
    noise = np.einsum("mij,mj->mi", C, z)
    return mean + noise.T.ravel()


def correlated_sigma(variances, rho):
    """``(L, L, m)`` blocks with the given per-channel variances and a common
    correlation ``rho`` between every channel pair."""
    var = np.asarray(variances, dtype=float)
    L, m = var.shape
    sd = np.sqrt(var)
    S = np.empty((L, L, m))
    for k in range(L):
        for l in range(L):
            S[k, l] = (1.0 if k == l else rho) * sd[k] * sd[l]
    return S


def image_digest(u, shape=None):
    """SHA-256 of the PROXIMG1 serialization of ``u``."""
    u = np.asarray(u, dtype=float)
    if shape is not None:
        u = u.reshape(shape)
    return hashlib.sha256(image_bytes(u)).hexdigest()


def compute_ground_truth(problem, reference_solver="precond-pdhgmp", iters=20000, provenance=None):
    """Long fixed-length run of the reference solver.

    Returns ``(u_star, digest, provenance)``; ``provenance`` records the
    solver, iteration count and anything passed in (config, seed).
    """
    if reference_solver not in ("precond-pdhgmp", "direct"):
        raise InvalidArgumentError(f"unknown reference solver {reference_solver!r}")
    iters = int(iters)
    if iters < 1:
        raise InvalidArgumentError("iters must be positive")
    if reference_solver == "direct":
        u = _direct_solve(problem)
    else:
        if isinstance(problem, PoissonTvProblem):
            _warn_if_not_injective(problem)
            comp = build_problem(problem, "pdhg")
            shape = problem.shape
        else:
            comp = problem
            shape = None
        cfg = SolverConfig(max_iter=iters, tol=0.0, precondition=True, log_objective=False)
        u, _, _ = run_pdhgmp(comp, cfg)
        if shape is not None:
            u = u.reshape(shape)
    prov = {"reference_solver": reference_solver, "iters": iters}
    prov.update(provenance or {})
    digest = image_digest(u)
    prov["digest"] = digest
    return u, digest, prov


def _direct_solve(problem):
    """Least-squares toy problems ``min 1/2 |Mx - c|^2`` solved exactly."""
    g = getattr(problem, "g", None)
    M = getattr(g, "M", None)
    if M is None:
        raise InvalidArgumentError("direct reference needs a least-squares problem")
    return np.linalg.lstsq(M, g.c, rcond=None)[0]


def _warn_if_not_injective(problem):
    K = problem.K.to_sparse()
    if K.shape[0] < K.shape[1]:
        logger.warning("K has fewer rows than columns; the minimizer may not be unique")


def provenance_json(prov):
    return json.dumps(prov, sort_keys=True, indent=2, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


__all__ = [
    "RNG_ALGORITHM", "make_rng", "Ellipse", "PhantomSpec", "default_phantom_spec",
    "make_phantom", "simulate_poisson_sinogram", "simulate_correlated_sinograms",
    "correlated_sigma", "image_digest", "compute_ground_truth", "provenance_json",
]
