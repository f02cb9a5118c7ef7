"""First-order convex optimization: proximal operators, splitting solvers and a
deterministic tomography benchmark harness."""

from .exceptions import (CertificateError, ConfigError, DigestMismatchError, DimensionError,
                         InfeasibleSetError, InvalidArgumentError)
from .linops import (Grad2D, Identity, LinearOperator, MatrixOperator, RadonSpec,
                     aslinearoperator, build_radon, dot_test, power_method_norm)
from .problems import (LassoProblem, PoissonTvProblem, PwlsProblem, RofProblem,
                       build_problem, relative_error)
from .solvers import (CSV_HEADER, CompositeProblem, ConvergenceRecord, SolverConfig,
                      run_admm, run_bregman_iteration, run_drs, run_fast_proximal_gradient,
                      run_pdhgmp, run_pidsplit, run_ppa, run_proximal_admm,
                      run_proximal_gradient, run_split_bregman, run_variable_metric_fb)
from .estimators import LassoRegressor, PetReconstructor, TVDenoiser

__version__ = "0.1.0"

__all__ = [
    "CertificateError", "ConfigError", "DigestMismatchError", "DimensionError",
    "InfeasibleSetError", "InvalidArgumentError",
    "Grad2D", "Identity", "LinearOperator", "MatrixOperator", "RadonSpec",
    "aslinearoperator", "build_radon", "dot_test", "power_method_norm",
    "LassoProblem", "PoissonTvProblem", "PwlsProblem", "RofProblem", "build_problem",
    "relative_error",
    "CSV_HEADER", "CompositeProblem", "ConvergenceRecord", "SolverConfig",
    "run_admm", "run_bregman_iteration", "run_drs", "run_fast_proximal_gradient",
    "run_pdhgmp", "run_pidsplit", "run_ppa", "run_proximal_admm",
    "run_proximal_gradient", "run_split_bregman", "run_variable_metric_fb",
    "LassoRegressor", "PetReconstructor", "TVDenoiser",
]
