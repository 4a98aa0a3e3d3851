"""Monte Carlo multivariate normal probabilities by separation of variables.

The dense path pairs the estimator with univariate (Genz-Trinh) reordering;
the scalable path pairs it with block reordering and a tile-low-rank factor.
Both share one per-row kernel, so a single-tile factor reproduces the dense
path exactly.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from . import truncnorm
from ._random import STREAM_CRUDE, STREAM_SOV, derive_seed, uniforms
from .errors import CholeskyError, NumericalError, ValidationError
from .linalg import TlrMatrix, _check_symmetric, dense_cholesky, jitter_levels, tlr_compress

PHI_INV_EPS = 1e-16
R_CRUDE = 64
WORKERS_ENV = "PROBITGP_NUM_WORKERS"
CHUNK_SIZE = 4096
PANEL = 32


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo settings.  ``sampler`` is ``"pseudo"`` (counter-based,
    the default) or ``"sobol"`` (scrambled Sobol points, opt-in)."""

    R: int = 20_000
    seed: int = 0
    antithetic: bool = False
    sampler: str = "pseudo"

    def __post_init__(self):
        if self.R < 2:
            raise ValidationError(f"R must be at least 2, got {self.R}")
        if self.antithetic and self.R % 2:
            raise ValidationError("antithetic sampling needs an even R")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.sampler not in ("pseudo", "sobol"):
            raise ValidationError(f"unknown sampler {self.sampler!r}")


@dataclass(frozen=True)
class ProbEstimate:
    value: float
    std_error: float
    R_used: int
    log_value: float = float("nan")
    rel_error: float = float("nan")

    def __post_init__(self):
        if np.isnan(self.log_value):
            lv = np.log(self.value) if self.value > 0 else -np.inf
            object.__setattr__(self, "log_value", float(lv))
        if np.isnan(self.rel_error):
            rel = self.std_error / self.value if self.value > 0 else np.inf
            object.__setattr__(self, "rel_error", float(rel))


@dataclass(frozen=True, eq=False)
class MvnProblem:
    """``P(a < X < b)`` for ``X ~ N(0, sigma)``."""

    a: np.ndarray
    b: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        sigma = _check_symmetric(np.atleast_2d(np.asarray(self.sigma, dtype=float)))
        n = sigma.shape[0]
        if a.shape != (n,) or b.shape != (n,):
            raise ValidationError(
                f"limits of shape {a.shape}, {b.shape} do not match sigma of size {n}")
        if np.any(np.isnan(a)) or np.any(np.isnan(b)) or np.any(a >= b):
            raise ValidationError("need a_i < b_i for every coordinate")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def permuted(self, perm) -> "MvnProblem":
        perm = np.asarray(perm)
        return MvnProblem(self.a[perm], self.b[perm], self.sigma[np.ix_(perm, perm)])


@dataclass(frozen=True, eq=False)
class ReorderResult:
    permutation: np.ndarray
    factor: np.ndarray | TlrMatrix
    a_perm: np.ndarray
    b_perm: np.ndarray
    block_estimates: np.ndarray | None = None


# ---------------------------------------------------------------------------
# sampling


def _sobol_matrix(cfg: McConfig, n: int) -> np.ndarray:
    from scipy.stats import qmc

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        pts = qmc.Sobol(d=n, scramble=True, seed=cfg.seed).random(cfg.R)
    return np.clip(pts, PHI_INV_EPS, 1.0 - PHI_INV_EPS).T.copy()


def sample_uniforms(cfg: McConfig, n: int, start: int, stop: int, stream: int = STREAM_SOV,
                    sobol: np.ndarray | None = None) -> np.ndarray:
    """Uniforms for samples ``start..stop-1``, shape ``(n, stop - start)``.

    Entry ``(j, r)`` depends only on ``(seed, stream, r, j)``.  With
    antithetic sampling, odd samples mirror their even partner.
    """
    if sobol is not None:
        return sobol[:, start:stop]
    r = np.arange(start, stop, dtype=np.uint64)
    j = np.arange(n, dtype=np.uint64)[:, None]
    if not cfg.antithetic:
        return uniforms(cfg.seed, stream, r[None, :], j)
    W = uniforms(cfg.seed, stream, (r // np.uint64(2))[None, :], j)
    odd = (r % np.uint64(2)).astype(bool)
    W[:, odd] = 1.0 - W[:, odd]
    return W


# ---------------------------------------------------------------------------
# the separation-of-variables recursion


def _tiles(factor):
    if isinstance(factor, TlrMatrix):
        return factor.offsets, factor.diagonal_tiles, factor.lowrank_prefix
    L = np.asarray(factor, dtype=float)
    return np.array([0, L.shape[0]]), [L], lambda I, Y: None


def _check_factor(factor, n):
    offsets, diag, _ = _tiles(factor)
    if offsets[-1] != n:
        raise ValidationError(f"factor of size {offsets[-1]} does not match problem size {n}")
    for D in diag:
        if np.any(np.diag(D) <= 0):
            raise NumericalError("factor has a non-positive diagonal entry")


def sov_chunk(a, b, factor, W):
    """Run the recursion for one chunk of samples.

    ``W`` has shape ``(n, m)``.  Returns the per-sample log products
    ``sum_i log(e_i - d_i)`` and ``Y`` with ``Y[i] = Phi^{-1}(d_i + w_i (e_i - d_i))``.
    """
    offsets, diag, prefix = _tiles(factor)
    n, m = W.shape
    Y = np.empty((n, m))
    logp = np.zeros(m)
    for I, D in enumerate(diag):
        start = int(offsets[I])
        size = D.shape[0]
        pre = prefix(I, Y)
        acc = np.zeros((size, m)) if pre is None else pre
        # rows are processed in panels; contributions of a finished panel to
        # the rows below it are added with one matrix product
        for p0 in range(0, size, PANEL):
            p1 = min(p0 + PANEL, size)
            for loc in range(p0, p1):
                i = start + loc
                s = acc[loc] + D[loc, p0:loc] @ Y[start + p0:i]
                lii = D[loc, loc]
                lo = (a[i] - s) / lii
                hi = (b[i] - s) / lii
                # evaluate on the side of zero that avoids cancellation
                upper = lo > 0
                q_lo = ndtr(np.where(upper, -lo, lo))
                q_hi = ndtr(np.where(upper, -hi, hi))
                diff = np.where(upper, q_lo - q_hi, q_hi - q_lo)
                with np.errstate(divide="ignore"):
                    logp += np.log(diff)
                t = np.where(upper, q_lo - W[i] * diff, q_lo + W[i] * diff)
                np.clip(t, PHI_INV_EPS, 1.0 - PHI_INV_EPS, out=t)
                y = ndtri(t)
                Y[i] = np.where(upper, -y, y)
            if p1 < size:
                acc[p1:] += D[p1:, p0:p1] @ Y[start + p0:start + p1]
    return logp, Y


def map_chunks(fn, R: int):
    """Apply ``fn(start, stop)`` over fixed-size sample chunks, in order.

    Chunk boundaries do not depend on the worker count, so neither do the
    results.
    """
    bounds = [(s, min(s + CHUNK_SIZE, R)) for s in range(0, R, CHUNK_SIZE)]
    workers = min(num_workers(), len(bounds))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda bd: fn(*bd), bounds))
    return [fn(*bd) for bd in bounds]


def sov_samples(a, b, factor, cfg: McConfig, stream: int = STREAM_SOV,
                keep_y: bool = False, project=None):
    """Per-sample log products for all ``cfg.R`` samples.

    Returns ``(logp, extra)``.  ``extra`` is the full ``Y`` matrix when
    ``keep_y`` is set, ``project @ Y`` when a projection matrix is given,
    and None otherwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    sobol = _sobol_matrix(cfg, n) if cfg.sampler == "sobol" else None

    def run(start, stop):
        W = sample_uniforms(cfg, n, start, stop, stream, sobol)
        logp, Y = sov_chunk(a, b, factor, W)
        if keep_y:
            return logp, Y
        if project is not None:
            return logp, project @ Y
        return logp, None

    parts = map_chunks(run, cfg.R)
    logp = np.concatenate([p[0] for p in parts])
    extra = None
    if keep_y or project is not None:
        extra = np.concatenate([p[1] for p in parts], axis=-1)
    return logp, extra


def summarize(logp, cfg: McConfig) -> ProbEstimate:
    """Mean and standard error of ``exp(logp)``, scaled to avoid underflow."""
    logp = np.asarray(logp, dtype=float)
    R = logp.shape[0]
    top = np.max(logp)
    if not np.isfinite(top):
        return ProbEstimate(0.0, 0.0, R, -np.inf)
    vals = np.exp(logp - top)
    if cfg.antithetic:
        vals = 0.5 * (vals[0::2] + vals[1::2])
    mean = float(np.mean(vals))
    sd = float(np.std(vals, ddof=1)) if vals.shape[0] > 1 else 0.0
    se = sd / np.sqrt(vals.shape[0])
    log_value = float(top + np.log(mean))
    value = min(float(np.exp(log_value)), 1.0)
    return ProbEstimate(value, float(np.exp(top) * se), R, log_value, se / mean)


def sov_estimate(p: MvnProblem, factor=None, cfg: McConfig = McConfig(),
                 stream: int = STREAM_SOV) -> ProbEstimate:
    """Estimate ``Phi_n(a, b; sigma)``; ``factor`` defaults to the dense Cholesky."""
    if factor is None:
        factor = dense_cholesky(p.sigma)
    _check_factor(factor, p.n)
    logp, _ = sov_samples(p.a, p.b, factor, cfg, stream)
    return summarize(logp, cfg)


def tlr_sov_estimate(p: MvnProblem, r: ReorderResult, cfg: McConfig = McConfig(),
                     stream: int = STREAM_SOV) -> ProbEstimate:
    """Same estimand as :func:`sov_estimate`, evaluated in the reordered
    variables through the tile-low-rank factor of ``r``."""
    _check_factor(r.factor, p.n)
    logp, _ = sov_samples(r.a_perm, r.b_perm, r.factor, cfg, stream)
    return summarize(logp, cfg)


# ---------------------------------------------------------------------------
# reordering


def _univariate_reorder(a, b, S):
    n = S.shape[0]
    S = S.copy()
    a = a.copy()
    b = b.copy()
    perm = np.arange(n)
    L = np.zeros((n, n))
    y = np.zeros(n)
    for i in range(n):
        cv = np.diag(S)[i:] - np.einsum("ij,ij->i", L[i:, :i], L[i:, :i])
        if np.any(cv <= 0):
            raise CholeskyError(f"non-positive conditional variance at step {i}")
        sd = np.sqrt(cv)
        mu = L[i:, :i] @ y[:i]
        lo = (a[i:] - mu) / sd
        hi = (b[i:] - mu) / sd
        lm = truncnorm.log_mass(lo, hi)
        k = i + int(np.lexsort((perm[i:], lm))[0])
        if k != i:
            S[[i, k]] = S[[k, i]]
            S[:, [i, k]] = S[:, [k, i]]
            for v in (a, b, perm):
                v[[i, k]] = v[[k, i]]
            L[[i, k], :i] = L[[k, i], :i]
            lo[[0, k - i]] = lo[[k - i, 0]]
            hi[[0, k - i]] = hi[[k - i, 0]]
            sd[[0, k - i]] = sd[[k - i, 0]]
        L[i, i] = sd[0]
        L[i + 1:, i] = (S[i + 1:, i] - L[i + 1:, :i] @ L[i, :i]) / L[i, i]
        y[i] = truncnorm.std_interval_mean(lo[0], hi[0])
    return perm, L, a, b


def univariate_reorder(p: MvnProblem) -> ReorderResult:
    """Greedy reordering that puts the variable with the least conditional
    mass first, factoring the permuted covariance as it goes.

    Earlier variables enter the conditional limits through their truncated
    normal means.  Ties go to the smallest original index.
    """
    for jitter in jitter_levels(p.sigma):
        S = p.sigma if jitter == 0.0 else p.sigma + jitter * np.eye(p.n)
        try:
            perm, L, a, b = _univariate_reorder(p.a, p.b, S)
        except CholeskyError:
            continue
        return ReorderResult(perm, L, a, b)
    raise CholeskyError("univariate reordering failed even with maximal jitter")


def block_reorder(p: MvnProblem, block_size: int, tol: float,
                  cfg: McConfig = McConfig()) -> ReorderResult:
    """Order consecutive blocks by a crude estimate of their marginal
    probability, reorder univariately inside each block, and build the
    tile-low-rank factor of the permuted covariance."""
    if block_size < 1:
        raise ValidationError(f"block_size must be positive, got {block_size}")
    n = p.n
    starts = list(range(0, n, block_size))
    inner, log_est = [], []
    for k, s in enumerate(starts):
        idx = np.arange(s, min(s + block_size, n))
        sub = MvnProblem(p.a[idx], p.b[idx], p.sigma[np.ix_(idx, idx)])
        ro = univariate_reorder(sub)
        crude = McConfig(R=R_CRUDE, seed=derive_seed(cfg.seed, STREAM_CRUDE, k))
        logp, _ = sov_samples(ro.a_perm, ro.b_perm, ro.factor, crude, STREAM_CRUDE)
        inner.append(idx[ro.permutation])
        log_est.append(summarize(logp, crude).log_value)
    log_est = np.array(log_est)
    order = np.lexsort((np.arange(len(starts)), log_est))
    perm = np.concatenate([inner[k] for k in order])
    sigma_perm = p.sigma[np.ix_(perm, perm)]
    factor = tlr_compress(sigma_perm, block_size, tol)
    return ReorderResult(perm, factor, p.a[perm], p.b[perm], log_est[order])
