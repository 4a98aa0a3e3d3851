"""Probit model with a Gaussian-process prior.

Marginal likelihood and predictive probabilities are ratios of Gaussian
CDFs; :class:`RatioPredictor` evaluates the ratio with one shared set of
samples for numerator and denominator.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve

from . import truncnorm
from ._random import STREAM_SOV
from .errors import NumericalError, ValidationError
from .linalg import KernelSpec, as_locations, build_covariance, cholesky_jitter
from .mvn import (
    McConfig,
    MvnProblem,
    ProbEstimate,
    block_reorder,
    sov_estimate,
    sov_samples,
    summarize,
    univariate_reorder,
)

DEFAULT_TOL = 1e-4


def default_block_size(n: int) -> int:
    return max(1, int(np.ceil(np.sqrt(n))))


@dataclass(frozen=True, eq=False)
class ProbitGpModel:
    """Training data plus prior.

    ``mean`` is the constant prior mean used at new locations (and for
    ``xi`` when no per-location vector is given).
    """

    locs: np.ndarray
    y: np.ndarray
    kernel: KernelSpec
    xi: np.ndarray | None = None
    mean: float = 0.0

    def __post_init__(self):
        locs = as_locations(self.locs)
        y = np.asarray(self.y)
        if y.shape != (locs.shape[0],):
            raise ValidationError(
                f"y has shape {y.shape}, expected ({locs.shape[0]},)")
        if not np.all((y == 0) | (y == 1)):
            raise ValidationError("y must contain only 0 and 1")
        if self.xi is None:
            xi = np.full(locs.shape[0], float(self.mean))
        else:
            xi = np.asarray(self.xi, dtype=float)
            if xi.shape != y.shape:
                raise ValidationError(f"xi has shape {xi.shape}, expected {y.shape}")
        object.__setattr__(self, "locs", locs)
        object.__setattr__(self, "y", y.astype(int))
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "_lock", threading.Lock())
        object.__setattr__(self, "_predictors", {})

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def signs(self) -> np.ndarray:
        """Diagonal of D, entries ``2 y_i - 1``."""
        return 2.0 * self.y - 1.0

    @cached_property
    def omega(self) -> np.ndarray:
        return build_covariance(self.kernel, self.locs)

    @cached_property
    def omega_cholesky(self):
        """Cached ``(L, jitter)`` for applying ``omega^{-1}``."""
        return cholesky_jitter(self.omega)

    def check_new_location(self, x_new) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x_new, dtype=float))
        if x.shape != (self.locs.shape[1],):
            raise ValidationError(
                f"new location has dimension {x.shape}, expected {self.locs.shape[1]}")
        hit = np.flatnonzero(np.all(self.locs == x, axis=1))
        if hit.size:
            raise ValidationError(f"new location coincides with training location {hit[0]}")
        return x

    def cross_covariance(self, x_new) -> np.ndarray:
        x = self.check_new_location(x_new)
        return self.kernel.cross(self.locs, x[None, :])[:, 0]

    def mean_at(self, m_new=None) -> float:
        return float(self.mean if m_new is None else m_new)

    def evidence_problem(self) -> MvnProblem:
        """``a = -inf``, ``b = D xi``, ``sigma = I + D omega D``."""
        d = self.signs
        sigma = np.eye(self.n) + d[:, None] * self.omega * d[None, :]
        return MvnProblem(np.full(self.n, -np.inf), d * self.xi, sigma)

    def ratio_predictor(self, cfg: McConfig, block_size=None, tol=DEFAULT_TOL) -> "RatioPredictor":
        """Per-model cache of the reordered, factored denominator problem."""
        bs = default_block_size(self.n) if block_size is None else int(block_size)
        key = (cfg, bs, float(tol))
        with self._lock:
            pred = self._predictors.get(key)
            if pred is None:
                pred = RatioPredictor(self, cfg, bs, tol)
                self._predictors[key] = pred
        return pred


def marginal_likelihood(model: ProbitGpModel, cfg: McConfig = McConfig(), method: str = "dense",
                        block_size=None, tol=DEFAULT_TOL) -> ProbEstimate:
    """Estimate ``p(y) = Phi_n(D xi; I + D omega D)``."""
    if method == "dense":
        p = model.evidence_problem()
        r = univariate_reorder(p)
        return sov_estimate(p.permuted(r.permutation), r.factor, cfg, STREAM_SOV)
    if method == "tlr":
        return model.ratio_predictor(cfg, block_size, tol).denominator
    raise ValidationError(f"unknown method {method!r}; expected 'dense' or 'tlr'")


@dataclass(frozen=True, eq=False)
class ExtendedProblem:
    D_star: np.ndarray
    xi_star: np.ndarray
    omega_star: np.ndarray

    def mvn_problem(self) -> MvnProblem:
        d = self.D_star
        n1 = d.shape[0]
        sigma = np.eye(n1) + d[:, None] * self.omega_star * d[None, :]
        return MvnProblem(np.full(n1, -np.inf), d * self.xi_star, sigma)


def extend_problem(model: ProbitGpModel, x_new, m_new=None) -> ExtendedProblem:
    k = model.cross_covariance(x_new)
    n = model.n
    omega_star = np.empty((n + 1, n + 1))
    omega_star[:n, :n] = model.omega
    omega_star[n, :n] = omega_star[:n, n] = k
    omega_star[n, n] = 1.0
    return ExtendedProblem(
        np.append(model.signs, 1.0),
        np.append(model.xi, model.mean_at(m_new)),
        omega_star,
    )


class RatioPredictor:
    """Shared-sample ratio estimator of predictive probabilities.

    Built once per (model, Monte Carlo settings, block size, tolerance): the
    evidence problem is block-reordered and factored in tile-low-rank form.
    Each prediction extends the factor by one row and runs the sample loop,
    reusing the same uniforms for numerator and denominator.
    """

    def __init__(self, model: ProbitGpModel, cfg: McConfig, block_size: int, tol: float):
        self.model = model
        self.cfg = cfg
        self.block_size = int(block_size)
        self.tol = float(tol)
        self.problem = model.evidence_problem()
        self.reorder = block_reorder(self.problem, self.block_size, self.tol, cfg)
        self._denominator = None

    @property
    def factor(self):
        return self.reorder.factor

    @property
    def denominator(self) -> ProbEstimate:
        if self._denominator is None:
            logw, _ = sov_samples(self.reorder.a_perm, self.reorder.b_perm,
                                  self.factor, self.cfg, STREAM_SOV)
            self._denominator = summarize(logw, self.cfg)
        return self._denominator

    def extension_row(self, x_new):
        """Last row of the extended factor in the reordered variables:
        ``(L[n+1, 1:n], l_{n+1,n+1})``."""
        k = self.model.cross_covariance(x_new)
        perm = self.reorder.permutation
        col = self.model.signs[perm] * k[perm]
        c = self.factor.solve_lower(col)
        l2 = 2.0 - c @ c
        if not l2 > 0:
            raise NumericalError("extended covariance is not positive definite")
        return c, float(np.sqrt(l2))

    def predict(self, x_new, m_new=None, lower=-np.inf) -> ProbEstimate:
        """``P(y_new = 1 | y)``; ``lower`` is the last variable's lower limit
        (``-inf`` for the predictive probability)."""
        return self.predict_many([x_new], [m_new], lower)[0]

    def predict_many(self, X_new, m_new=None, lower=-np.inf) -> list[ProbEstimate]:
        """Several predictions from one pass over the shared samples."""
        X_new = [np.atleast_1d(np.asarray(x, dtype=float)) for x in X_new]
        if m_new is None:
            m_new = [None] * len(X_new)
        rows = [self.extension_row(x) for x in X_new]
        C = np.array([c for c, _ in rows])
        scale = np.array([l for _, l in rows])
        upper = np.array([self.model.mean_at(m) for m in m_new])
        logw, T = sov_samples(self.reorder.a_perm, self.reorder.b_perm, self.factor,
                              self.cfg, STREAM_SOV, project=C)
        if self._denominator is None:
            self._denominator = summarize(logw, self.cfg)
        top = np.max(logw)
        if not np.isfinite(top):
            raise NumericalError("denominator sample mean is zero")
        w = np.exp(logw - top)
        wsum = w.sum()
        out = []
        for j in range(len(X_new)):
            diff = truncnorm.mass((lower - T[j]) / scale[j], (upper[j] - T[j]) / scale[j])
            p = float(w @ diff / wsum)
            se = float(np.sqrt(np.sum((w * (diff - p)) ** 2)) / wsum)
            with np.errstate(divide="ignore"):
                log_p = float(np.log(w @ diff) - np.log(wsum))
            out.append(ProbEstimate(p, se, self.cfg.R, log_p))
        return out


def predict_ratio(model: ProbitGpModel, x_new, cfg: McConfig = McConfig(), block_size=None,
                  tol=DEFAULT_TOL, m_new=None) -> ProbEstimate:
    return model.ratio_predictor(cfg, block_size, tol).predict(x_new, m_new)


@dataclass(frozen=True)
class ConditionalGp:
    mu: float
    H: np.ndarray
    sigma2: float


def conditional_gp_params(model: ProbitGpModel, x_new, m_new=None) -> ConditionalGp:
    """Law of f(x_new) given f(X): ``N(mu + H f(X), sigma2)``."""
    k = model.cross_covariance(x_new)
    H = cho_solve((model.omega_cholesky[0], True), k)
    mu = model.mean_at(m_new) - H @ model.xi
    sigma2 = max(1.0 - float(k @ H), 0.0)
    return ConditionalGp(float(mu), H, sigma2)


@dataclass(frozen=True, eq=False)
class LatentParams:
    sigma_X: np.ndarray
    mu_X: np.ndarray
    sigma_z: np.ndarray
    sigma_z_chol: np.ndarray


def latent_params(model: ProbitGpModel) -> LatentParams:
    """Gaussian part of the augmented posterior, from one factorization.

    With ``S = I + omega``: ``sigma_X = (omega^{-1} + I)^{-1} = I - S^{-1}``
    and ``mu_X = sigma_X omega^{-1} xi = S^{-1} xi``, so ``omega`` itself is
    never inverted.
    """
    n = model.n
    sigma_z = np.eye(n) + model.omega
    Lz, _ = cholesky_jitter(sigma_z)
    S_inv = cho_solve((Lz, True), np.eye(n))
    S_inv = 0.5 * (S_inv + S_inv.T)
    sigma_X = np.eye(n) - S_inv
    sigma_X = 0.5 * (sigma_X + sigma_X.T)
    mu_X = cho_solve((Lz, True), model.xi)
    return LatentParams(sigma_X, mu_X, sigma_z, Lz)


@dataclass(frozen=True, eq=False)
class SunParams:
    xi: np.ndarray
    omega: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    Gamma: np.ndarray
    s: np.ndarray
    omega_scale: np.ndarray


def sun_params(model: ProbitGpModel) -> SunParams:
    """Unified skew-normal parameters of the posterior of f(X)."""
    d = model.signs
    omega = model.omega
    M = d[:, None] * omega * d[None, :] + np.eye(model.n)
    s = np.sqrt(np.diag(M))
    w = np.sqrt(np.diag(omega))
    omega_bar = omega / w[:, None] / w[None, :]
    delta = (omega_bar * w[None, :]) * d[None, :] / s[None, :]
    gamma = d * model.xi / s
    Gamma = M / s[:, None] / s[None, :]
    np.fill_diagonal(Gamma, 1.0)
    return SunParams(model.xi.copy(), omega, delta, gamma, Gamma, s, w)
