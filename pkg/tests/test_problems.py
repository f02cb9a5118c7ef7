import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxsplit.exceptions import DimensionError, InvalidArgumentError
from proxsplit.linops import Identity, RadonSpec, build_radon, dot_test
from proxsplit.problems import (LassoProblem, PoissonTvProblem, PwlsProblem, RofProblem,
                                build_problem, objective_eval, pwls_gradient, relative_error,
                                tv_value)
from proxsplit.simulate import correlated_sigma

K8 = build_radon(RadonSpec(8, 10, 12))


def _pet(seed=0, nonneg=True):
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.5, 2.0, 64)
    counts = rng.poisson(K8.apply(u)).astype(float)
    return PoissonTvProblem(K8, counts, 0.1, (8, 8), nonneg=nonneg), u


def _pwls(rho=0.6, L=2, coupling="full", seed=0):
    rng = np.random.default_rng(seed)
    m = K8.rows
    var = rng.uniform(0.5, 2.0, (L, m))
    S = correlated_sigma(var, rho)
    data = rng.normal(size=L * m)
    return PwlsProblem(K8, L, data, S, 0.2, (8, 8), coupling=coupling)


def _fd_grad(fun, x, h=1e-6):
    return np.array([(fun(x + h * e) - fun(x - h * e)) / (2 * h) for e in np.eye(x.size)])


def test_rof_assignment():
    f = np.random.default_rng(0).normal(size=(4, 5))
    spec = RofProblem(f, 0.3)
    comp = build_problem(spec, "pdhg")
    assert comp.A.rows == 40 and comp.A.cols == 20
    x = np.random.default_rng(1).normal(size=20)
    assert comp.g(x) == pytest.approx(0.5 * np.sum((x - f.ravel()) ** 2))
    assert comp.h(comp.A.apply(x)) == pytest.approx(0.3 * tv_value(spec.grad.apply(x)))


def test_lasso_assignments():
    rng = np.random.default_rng(2)
    K, b = rng.normal(size=(6, 4)), rng.normal(size=6)
    spec = LassoProblem(K, b, 0.4)
    fbs = build_problem(spec, "fbs")
    assert isinstance(fbs.A, Identity)
    assert fbs.g.lipschitz == pytest.approx(np.linalg.norm(K, 2) ** 2, rel=1e-8)
    x = rng.normal(size=4)
    for split in ("fbs", "admm", "pdhg"):
        assert build_problem(spec, split).objective(x) == pytest.approx(spec.objective(x))
    pd = build_problem(spec, "pdhg")
    assert pd.g(x) + pd.h(pd.A.apply(x)) == pytest.approx(spec.objective(x))


def test_pidsplit_stack_dimensions():
    prob, _ = _pet()
    comp = build_problem(prob, "pidsplit")
    m, n = K8.rows, K8.cols
    assert comp.A.rows == m + 2 * n + n
    assert dot_test(comp.A, trials=20) <= 1e-12


def test_pdhg_builders_pass_dot_test():
    prob, _ = _pet()
    assert dot_test(build_problem(prob, "pdhg").A, trials=20) <= 1e-12
    assert dot_test(build_problem(_pwls(), "pdhg").A, trials=20) <= 1e-12


def test_invalid_splitting():
    spec = RofProblem(np.zeros((3, 3)), 1.0)
    with pytest.raises(InvalidArgumentError):
        build_problem(spec, "fbs")
    with pytest.raises(InvalidArgumentError):
        build_problem(spec, "nope")
    with pytest.raises(InvalidArgumentError):
        build_problem(LassoProblem(np.eye(2), [1.0, 2.0], 1.0), "pidsplit")


def test_objective_examples():
    f = np.random.default_rng(3).normal(size=(5, 5))
    spec = RofProblem(f, 0.7)
    assert objective_eval(spec, f) == pytest.approx(0.7 * tv_value(spec.grad.apply(f.ravel())))
    rng = np.random.default_rng(4)
    K, b = rng.normal(size=(3, 5)), rng.normal(size=3)
    assert objective_eval(LassoProblem(K, b, 1.0), np.zeros(5)) == pytest.approx(0.5 * b @ b)


def test_pwls_identity_covariance_is_least_squares():
    rng = np.random.default_rng(5)
    m, L = K8.rows, 2
    data = rng.normal(size=L * m)
    S = np.zeros((L, L, m))
    S[0, 0] = S[1, 1] = 1.0
    prob = PwlsProblem(K8, L, data, S, 0.2, (8, 8))
    u = rng.normal(size=L * 64)
    direct = sum(0.5 * np.sum((K8.apply(u[l * 64:(l + 1) * 64]) - data[l * m:(l + 1) * m]) ** 2)
                 for l in range(L))
    assert objective_eval(prob, u) == pytest.approx(direct + 0.2 * prob.tv(u), rel=1e-12)


def test_poisson_objective_respects_nonnegativity():
    prob, u = _pet()
    assert math.isfinite(objective_eval(prob, u))
    u[0] = -1.0
    assert objective_eval(prob, u) == math.inf


def test_relative_error_examples():
    u = np.array([3.0, -4.0])
    assert relative_error(u, u) == 0
    assert relative_error(np.zeros(2), u) == 1
    assert relative_error(1.05 * u, u) == pytest.approx(0.05)
    with pytest.raises(InvalidArgumentError):
        relative_error(u, np.zeros(2))
    with pytest.raises(DimensionError):
        relative_error(np.ones(3), u)


def test_pwls_gradient_examples():
    prob = _pwls()
    rng = np.random.default_rng(6)
    u = rng.normal(size=2 * 64)
    fd = _fd_grad(lambda v: 0.5 * float(prob.residual(v) @ prob.solve_sigma(prob.residual(v))), u)
    g = pwls_gradient(prob, u)
    assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)
    # data generated by u itself gives a zero gradient
    clean = PwlsProblem(K8, 2, prob.KL.apply(u), prob.sigma.transpose(1, 2, 0), 0.2, (8, 8))
    assert np.allclose(pwls_gradient(clean, u), 0, atol=1e-10)
    single = PwlsProblem(K8, 1, rng.normal(size=K8.rows), np.ones((1, 1, K8.rows)), 0.2, (8, 8))
    v = rng.normal(size=64)
    assert np.allclose(pwls_gradient(single, v), K8.adjoint(K8.apply(v) - single.data))


def test_pwls_rejects_non_spd_covariance():
    S = correlated_sigma(np.ones((2, K8.rows)), 0.5)
    S[0, 1] = S[1, 0] = 2.0
    with pytest.raises(InvalidArgumentError):
        PwlsProblem(K8, 2, np.zeros(2 * K8.rows), S, 0.2, (8, 8))


def test_pwls_coupling_agrees_without_cross_blocks():
    full = _pwls(rho=0.0, coupling="full")
    diag = _pwls(rho=0.0, coupling="diagonal")
    u = np.random.default_rng(7).normal(size=128)
    assert abs(full.objective(u) - diag.objective(u)) <= 1e-12 * abs(full.objective(u))


def test_poisson_gradient_by_finite_differences():
    prob, u = _pet()
    fd = _fd_grad(lambda v: prob.data_term(K8.apply(v)), u)
    g = prob.gradient(u)
    assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


def test_em_step_decreases_poisson_likelihood():
    rng = np.random.default_rng(8)
    K = build_radon(RadonSpec(4, 6, 6))
    counts = rng.poisson(K.apply(rng.uniform(1, 3, 16)) * 20).astype(float)
    prob = PoissonTvProblem(K, counts, 1e-9, (4, 4))
    u = np.ones(16)
    for _ in range(5):
        nxt = prob.em_step(u)
        assert prob.data_term(K.apply(nxt)) <= prob.data_term(K.apply(u)) + 1e-9
        u = nxt


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["pet", "rof", "lasso", "pwls"]))
def test_objectives_are_convex_along_chords(seed, kind):
    rng = np.random.default_rng(seed)
    if kind == "pet":
        prob, _ = _pet(seed % 7)
        a, b = rng.uniform(0.1, 3, 64), rng.uniform(0.1, 3, 64)
    elif kind == "rof":
        prob = RofProblem(rng.normal(size=(6, 6)), 0.4)
        a, b = rng.normal(size=36), rng.normal(size=36)
    elif kind == "lasso":
        prob = LassoProblem(rng.normal(size=(5, 7)), rng.normal(size=5), 0.3)
        a, b = rng.normal(size=7), rng.normal(size=7)
    else:
        prob = _pwls(seed=seed % 5)
        a, b = rng.normal(size=128), rng.normal(size=128)
    fa, fb, fm = (objective_eval(prob, x) for x in (a, b, 0.5 * (a + b)))
    assert fm <= 0.5 * fa + 0.5 * fb + 1e-9 * max(1.0, abs(fa), abs(fb))
