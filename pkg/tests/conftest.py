"""Independent oracles shared by the test modules."""

import itertools

import numpy as np
import pytest
from scipy.special import ndtr


def orthant2(rho):
    """P(X1 < 0, X2 < 0) for a standard bivariate normal with correlation rho."""
    return 0.25 + np.arcsin(rho) / (2.0 * np.pi)


def gauss_hermite_expectation(fn, mean, cov, nodes):
    """E[fn(F)] for F ~ N(mean, cov) by tensor-product Gauss-Hermite.

    ``fn`` maps an (m, d) array of points to m values.
    """
    d = len(mean)
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / np.sqrt(2.0 * np.pi)
    L = np.linalg.cholesky(cov)
    Z = np.array(list(itertools.product(x, repeat=d)))
    W = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
    F = mean + Z @ L.T
    return float(W @ fn(F))


def converged_quadrature(fn, mean, cov, nodes=(24, 32)):
    """Quadrature value plus a check that more nodes do not move it."""
    lo, hi = (gauss_hermite_expectation(fn, mean, cov, k) for k in nodes)
    assert abs(lo - hi) < 1e-6, (lo, hi)
    return hi


def quad_evidence(xi, omega, y):
    d = 2.0 * np.asarray(y) - 1.0
    return converged_quadrature(lambda F: np.prod(ndtr(F * d), axis=1), xi, omega)


def quad_predictive(xi_star, omega_star, y):
    """P(y_new = 1 | y) as a ratio of two prior expectations over (f, f_new)."""
    d = 2.0 * np.asarray(y) - 1.0
    n = len(d)
    num = converged_quadrature(
        lambda F: np.prod(ndtr(F[:, :n] * d), axis=1) * ndtr(F[:, n]), xi_star, omega_star)
    den = quad_evidence(xi_star[:n], omega_star[:n, :n], y)
    return num / den


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_PROTOCOL_CACHE = {}


def desk_scale_protocol(seed=0, R=20_000):
    """Simulated 16x16 grid study: alpha fitted on (15, 45, 60), 100 random
    holdouts, both predictors.  Cached because several tests read it."""
    from probitgp.harness import RunConfig, estimate_alpha, predict_batch, simulate_dataset
    import time

    key = (seed, R)
    if key not in _PROTOCOL_CACHE:
        t0 = time.perf_counter()
        ds = simulate_dataset(16, 30.0, seed, "random", 100)
        alpha_hat, _ = estimate_alpha(ds, (15.0, 45.0, 60), RunConfig(R=R, seed=seed))
        reps = {}
        for method in ("tlr", "vb"):
            est, rep = predict_batch(ds, RunConfig(method=method, R=R, seed=seed,
                                                   alpha=alpha_hat))
            reps[method] = (est, rep)
        _PROTOCOL_CACHE[key] = (alpha_hat, reps, time.perf_counter() - t0)
    return _PROTOCOL_CACHE[key]
