import numpy as np
import pytest
from scipy.special import ndtr

from conftest import orthant2, quad_predictive
from probitgp import truncnorm
from probitgp.errors import ValidationError
from probitgp.linalg import KernelSpec
from probitgp.model import ProbitGpModel, extend_problem, latent_params, predict_ratio
from probitgp.mvn import McConfig
from probitgp.vb import (
    TnFactor,
    cavi_fit,
    conditional_rows,
    exact_tn_predict,
    predict_vb,
    sample_exact_latent,
)

CFG = McConfig(R=20_000, seed=1)


def far_apart(n):
    return np.arange(n, dtype=float)[:, None] * 100.0


def test_cavi_one_dimension_is_exact():
    m = ProbitGpModel([[0.0]], [1], KernelSpec(1.0), xi=[0.4])
    fit = cavi_fit(m)
    assert fit.converged and fit.iterations == 1
    f = fit.factors[0]
    assert f.loc == pytest.approx(0.4) and f.scale == pytest.approx(np.sqrt(2.0))
    assert f.side == "positive"
    assert f.mean() == pytest.approx(truncnorm.tn_mean(0.4, np.sqrt(2), 1))


def test_cavi_diagonal_is_exact():
    xi = np.array([0.5, -0.3, 1.1, 0.0])
    y = np.array([1, 0, 0, 1])
    m = ProbitGpModel(far_apart(4), y, KernelSpec(1.0), xi=xi)
    fit = cavi_fit(m)
    assert fit.converged and fit.iterations == 1
    np.testing.assert_allclose(fit.locs, xi, atol=1e-15)
    np.testing.assert_allclose(fit.scales, np.sqrt(2.0))
    assert [f.side for f in fit.factors] == ["positive", "negative", "negative", "positive"]


def test_cavi_fixed_point():
    a = -np.log(0.5)
    m = ProbitGpModel([[0.0], [1.0]], [1, 1], KernelSpec(a))
    tol = 1e-8
    fit = cavi_fit(m, tol=tol)
    assert fit.converged
    P = np.linalg.inv(latent_params(m).sigma_z)
    H, var = conditional_rows(P)
    means = fit.means
    for i in range(2):
        target = truncnorm.tn_mean(H[i] @ means, np.sqrt(var[i]), 1)
        assert abs(means[i] - target) < tol
    assert fit.final_delta < tol


def test_cavi_reports_non_convergence():
    g = np.random.default_rng(0)
    X = g.uniform(size=(30, 2))
    m = ProbitGpModel(X, g.integers(0, 2, 30), KernelSpec(3.0))
    fit = cavi_fit(m, tol=1e-14, max_iter=2)
    assert fit.iterations == 2 and not fit.converged
    with pytest.raises(ValidationError):
        cavi_fit(m, tol=0.0)


def test_tn_factor_validation():
    with pytest.raises(ValidationError):
        TnFactor(0.0, 0.0, "positive")
    with pytest.raises(ValueError):
        TnFactor(0.0, 1.0, "up")


def test_predict_vb_independent_point():
    g = np.random.default_rng(2)
    m = ProbitGpModel(g.uniform(size=(5, 2)), g.integers(0, 2, 5), KernelSpec(5.0))
    est = predict_vb(m, cavi_fit(m), [800.0, 800.0], CFG)
    assert abs(est.value - 0.5) <= max(3 * est.std_error, 1e-12)


def test_predict_vb_bivariate_oracle():
    rho = 0.8
    m = ProbitGpModel([[0.0]], [1], KernelSpec(-np.log(rho)))
    est = predict_vb(m, cavi_fit(m), [1.0], CFG)
    ref = orthant2(rho / 2) / 0.5
    assert abs(est.value - ref) <= max(3 * est.std_error, 5e-3)


def test_predict_vb_diagonal_matches_ratio():
    xi = np.array([0.3, -0.6, 0.9])
    m = ProbitGpModel(far_apart(3), [1, 0, 1], KernelSpec(0.01), xi=xi)
    x = [50.0]
    v = predict_vb(m, cavi_fit(m), x, CFG)
    ext = extend_problem(m, x)
    ref = quad_predictive(ext.xi_star, ext.omega_star, m.y)
    assert abs(v.value - ref) <= 3 * v.std_error


def test_exact_tn_predict_agrees_at_small_n():
    rho = 0.6
    m = ProbitGpModel([[0.0]], [0], KernelSpec(-np.log(rho)), xi=[0.2])
    v = predict_vb(m, cavi_fit(m), [1.0], CFG)
    e = exact_tn_predict(m, [1.0], CFG)
    assert abs(v.value - e.value) <= 3 * np.hypot(v.std_error, e.std_error)

    m = ProbitGpModel([[0.0], [0.4]], [1, 0], KernelSpec(3.0))
    x = [0.8]
    e = exact_tn_predict(m, x, CFG)
    r = predict_ratio(m, x, CFG)
    assert abs(e.value - r.value) <= 3 * np.hypot(e.std_error, r.std_error)


def test_exact_acceptance_rate():
    xi = np.array([0.5, -0.2, 1.0])
    m = ProbitGpModel(far_apart(3), [1, 1, 1], KernelSpec(1.0), xi=xi)
    R = 20_000
    _, rate = sample_exact_latent(m, R, 0)
    p = float(np.prod(ndtr(xi / np.sqrt(2))))
    # at least one batch of proposals was drawn; more only tightens the bound
    proposals = max(4 * R, 100_000)
    assert abs(rate - p) <= 3 * np.sqrt(p * (1 - p) / proposals)


def test_exact_sampler_limits():
    g = np.random.default_rng(0)
    m = ProbitGpModel(g.uniform(size=(13, 2)), g.integers(0, 2, 13), KernelSpec(5.0))
    with pytest.raises(ValidationError):
        sample_exact_latent(m, 10, 0)


def test_vb_determinism(monkeypatch):
    g = np.random.default_rng(7)
    m = ProbitGpModel(g.uniform(size=(9, 2)), g.integers(0, 2, 9), KernelSpec(5.0))
    fit = cavi_fit(m)
    monkeypatch.setenv("PROBITGP_NUM_WORKERS", "1")
    a = predict_vb(m, fit, [0.5, 0.5], McConfig(R=10_000, seed=3))
    monkeypatch.setenv("PROBITGP_NUM_WORKERS", "3")
    b = predict_vb(m, fit, [0.5, 0.5], McConfig(R=10_000, seed=3))
    assert a == b
    assert 0 < a.value < 1
