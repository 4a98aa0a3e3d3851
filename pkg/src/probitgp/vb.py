"""Mean-field variational approximation of the truncated-normal latent
utilities, and predictive probabilities built on it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import ndtr

from . import truncnorm
from ._random import STREAM_EXACT, STREAM_VB, derive_seed
from .errors import NumericalError, ValidationError
from .model import ProbitGpModel, conditional_gp_params, latent_params
from .mvn import McConfig, ProbEstimate, map_chunks

DEFAULT_CAVI_TOL = 1e-6
DEFAULT_CAVI_MAX_ITER = 1000
EXACT_MAX_N = 12
MIN_ACCEPTANCE = 1e-6


@dataclass(frozen=True)
class TnFactor:
    """``N(loc, scale^2)`` truncated to ``z > 0`` (positive) or ``z < 0``."""

    loc: float
    scale: float
    side: str

    def __post_init__(self):
        if not self.scale > 0:
            raise ValidationError(f"scale must be positive, got {self.scale}")
        truncnorm.side_sign(self.side)

    def mean(self) -> float:
        return float(truncnorm.tn_mean(self.loc, self.scale, self.side))


@dataclass(frozen=True, eq=False)
class TnFactorSet:
    factors: tuple
    iterations: int
    converged: bool
    final_delta: float
    max_change: float = float("nan")

    @property
    def locs(self) -> np.ndarray:
        return np.array([f.loc for f in self.factors])

    @property
    def scales(self) -> np.ndarray:
        return np.array([f.scale for f in self.factors])

    @property
    def signs(self) -> np.ndarray:
        return np.array([truncnorm.side_sign(f.side) for f in self.factors])

    @property
    def means(self) -> np.ndarray:
        return truncnorm.tn_mean(self.locs, self.scales, self.signs)


def conditional_rows(precision):
    """``H_{z_i}`` rows (as a zero-diagonal matrix) and conditional variances
    ``sigma2_{z_i}`` from the precision matrix of ``z``."""
    d = np.diag(precision).copy()
    H = -precision / d[:, None]
    np.fill_diagonal(H, 0.0)
    return H, 1.0 / d


def cavi_fit(model: ProbitGpModel, tol: float = DEFAULT_CAVI_TOL,
             max_iter: int = DEFAULT_CAVI_MAX_ITER) -> TnFactorSet:
    """Coordinate ascent over univariate truncated normals.

    Sweeps i = 1..n in order, each update using the freshest means of the
    other coordinates.  After every sweep the fixed-point residual
    ``max_i |mean_i - tn_mean(loc_i(means), scale_i)|`` is evaluated; the fit
    stops once it falls below ``tol``.
    """
    if tol <= 0 or max_iter < 1:
        raise ValidationError("tol must be positive and max_iter at least 1")
    lat = latent_params(model)
    try:
        P = cho_solve((lat.sigma_z_chol, True), np.eye(model.n))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"cannot invert the latent covariance: {exc}") from exc
    H, var = conditional_rows(0.5 * (P + P.T))
    scale = np.sqrt(var)
    xi = model.xi
    sign = model.signs
    means = np.zeros(model.n)
    locs = xi.copy()

    converged = False
    residual = max_change = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        max_change = 0.0
        for i in range(model.n):
            loc = xi[i] + H[i] @ (means - xi)
            new = truncnorm.tn_mean(loc, scale[i], sign[i])
            max_change = max(max_change, abs(new - means[i]))
            locs[i] = loc
            means[i] = new
        target = truncnorm.tn_mean(xi + H @ (means - xi), scale, sign)
        residual = float(np.max(np.abs(target - means)))
        if residual < tol:
            converged = True
            break

    sides = np.where(sign > 0, "positive", "negative")
    factors = tuple(TnFactor(float(l), float(s), str(sd)) for l, s, sd in zip(locs, scale, sides))
    return TnFactorSet(factors, it, converged, residual, float(max_change))


def _plugin_terms(model, x_new, m_new):
    cond = conditional_gp_params(model, x_new, m_new)
    lat = latent_params(model)
    g = lat.sigma_X @ cond.H
    base = cond.mu + cond.H @ lat.mu_X
    var = 1.0 + cond.sigma2 + cond.H @ g
    return g, float(base), float(np.sqrt(var))


def _estimate(vals: np.ndarray, R: int) -> ProbEstimate:
    se = float(np.std(vals, ddof=1) / np.sqrt(R)) if R > 1 else 0.0
    return ProbEstimate(float(np.mean(vals)), se, R)


def sample_factors(factors: TnFactorSet, cfg: McConfig, start: int, stop: int) -> np.ndarray:
    """Independent draws for samples ``start..stop-1``; shape ``(n, m)``.

    Draw ``(i, r)`` is keyed by ``(seed, r, i)``.
    """
    r = np.arange(start, stop, dtype=np.uint64)[None, :]
    i = np.arange(len(factors.factors), dtype=np.uint64)[:, None]
    return truncnorm.tn_sample(factors.locs[:, None], factors.scales[:, None],
                               factors.signs[:, None], (cfg.seed, STREAM_VB, r, i))


def predict_vb(model: ProbitGpModel, factors: TnFactorSet, x_new, cfg: McConfig = McConfig(),
               m_new=None) -> ProbEstimate:
    """Average of ``Phi((mu + H [mu_X + sigma_X z]) / sqrt(1 + sigma2 + H sigma_X H'))``
    over draws ``z`` from the fitted factors."""
    if len(factors.factors) != model.n:
        raise ValidationError("factor set does not match the model size")
    g, base, sd = _plugin_terms(model, x_new, m_new)

    def run(start, stop):
        Z = sample_factors(factors, cfg, start, stop)
        return ndtr((base + g @ Z) / sd)

    vals = np.concatenate(map_chunks(run, cfg.R))
    return _estimate(vals, cfg.R)


def sample_exact_latent(model: ProbitGpModel, R: int, seed: int):
    """Exact draws from the orthant-truncated ``N(xi, I + omega)`` by rejection.

    Returns ``(draws of shape (R, n), acceptance rate)``.
    """
    n = model.n
    if n > EXACT_MAX_N:
        raise ValidationError(f"exact sampling supports n <= {EXACT_MAX_N}, got {n}")
    lat = latent_params(model)
    rng = np.random.default_rng(derive_seed(seed, STREAM_EXACT))
    sign = model.signs
    batch = max(4 * R, 100_000)
    kept, accepted, proposed = [], 0, 0
    while accepted < R:
        Z = model.xi + rng.standard_normal((batch, n)) @ lat.sigma_z_chol.T
        ok = np.all(sign * Z > 0, axis=1)
        kept.append(Z[ok])
        accepted += int(ok.sum())
        proposed += batch
        if proposed >= 1_000_000 and accepted / proposed < MIN_ACCEPTANCE:
            raise NumericalError(
                f"acceptance rate {accepted / proposed:.2e} is below {MIN_ACCEPTANCE:g}; "
                "use a smaller n")
    return np.concatenate(kept)[:R], accepted / proposed


def exact_tn_predict(model: ProbitGpModel, x_new, cfg: McConfig = McConfig(),
                     m_new=None) -> ProbEstimate:
    """Same plug-in functional as :func:`predict_vb`, but averaged over exact
    draws of the truncated latent vector.  Meant for small n."""
    Z, _ = sample_exact_latent(model, cfg.R, cfg.seed)
    g, base, sd = _plugin_terms(model, x_new, m_new)
    return _estimate(ndtr((base + Z @ g) / sd), cfg.R)
