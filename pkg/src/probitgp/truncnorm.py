"""Univariate truncated normal utilities, stable in the tails.

Truncation sides are encoded as signs: +1 keeps ``z > 0`` and -1 keeps
``z < 0``.  The strings ``"positive"`` and ``"negative"`` are accepted too.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from ._random import uniforms

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
# Past this many standard deviations the inverse-CDF draw is replaced by an
# exponential rejection sampler.
REJECTION_THRESHOLD = 5.0
MAX_ATTEMPTS = 64


def side_sign(side):
    if isinstance(side, str):
        if side == "positive":
            return 1.0
        if side == "negative":
            return -1.0
        raise ValueError(f"side must be 'positive' or 'negative', got {side!r}")
    s = np.asarray(side, dtype=float)
    if not np.all(np.abs(s) == 1.0):
        raise ValueError("side signs must be +1 or -1")
    return s


def log_pdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - _LOG_SQRT_2PI


def log_mass(lo, hi):
    """``log(Phi(hi) - Phi(lo))`` without cancellation in either tail."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    upper = lo > 0
    big = np.where(upper, log_ndtr(-lo), log_ndtr(hi))
    small = np.where(upper, log_ndtr(-hi), log_ndtr(lo))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = big + np.log1p(-np.exp(small - big))
    out = np.where(hi <= lo, -np.inf, out)
    return out[()] if out.ndim == 0 else out


def mass(lo, hi):
    """``Phi(hi) - Phi(lo)`` evaluated on whichever side of zero is accurate."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    upper = lo > 0
    out = np.where(upper, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
    return out[()] if out.ndim == 0 else out


def std_interval_mean(lo, hi):
    """Mean of a standard normal restricted to ``(lo, hi)``."""
    lm = log_mass(lo, hi)
    with np.errstate(over="ignore", invalid="ignore"):
        m = np.exp(log_pdf(lo) - lm) - np.exp(log_pdf(hi) - lm)
    # empty interval in floating point: fall back to the nearest finite limit
    bad = ~np.isfinite(m)
    if np.any(bad):
        lo_b, hi_b = np.broadcast_arrays(lo, hi)
        fallback = np.where(np.isfinite(lo_b), lo_b, hi_b)
        m = np.where(bad, fallback, m)
    return m


def mills_ratio(x):
    """``phi(x) / Phi(x)``, finite for every real ``x``."""
    return np.exp(log_pdf(x) - log_ndtr(x))


def tn_mean(loc, scale, side):
    """Mean of ``N(loc, scale^2)`` truncated to the given side of zero."""
    s = side_sign(side)
    loc = np.asarray(loc, dtype=float)
    scale = np.asarray(scale, dtype=float)
    out = loc + s * scale * mills_ratio(s * loc / scale)
    return out[()] if np.ndim(out) == 0 else out


def tn_variance(loc, scale, side):
    s = side_sign(side)
    x = s * np.asarray(loc, dtype=float) / scale
    lam = mills_ratio(x)
    return scale ** 2 * (1.0 - lam * (lam + x))


def _std_lower_tail_draw(alpha, key):
    """Draw ``X ~ N(0, 1)`` conditioned on ``X > alpha`` from keyed uniforms."""
    alpha = np.asarray(alpha, dtype=float)
    u = uniforms(*key)
    # inverse CDF of the upper tail: P(X > x) = u * P(X > alpha)
    tail = ndtr(-np.minimum(alpha, REJECTION_THRESHOLD))
    x = -ndtri(u * tail)
    alpha = np.broadcast_to(alpha, x.shape)

    far = alpha > REJECTION_THRESHOLD
    if np.any(far):
        a = alpha[far]
        lam = 0.5 * (a + np.sqrt(a * a + 4.0))
        result = np.full(a.shape, np.nan)
        pending = np.ones(a.shape, dtype=bool)
        key_far = [np.broadcast_to(k, alpha.shape)[far] for k in key]
        for attempt in range(MAX_ATTEMPTS):
            u1 = uniforms(*[k[pending] for k in key_far], attempt, 0)
            u2 = uniforms(*[k[pending] for k in key_far], attempt, 1)
            cand = a[pending] - np.log(u1) / lam[pending]
            ok = np.log(u2) <= -0.5 * (cand - lam[pending]) ** 2
            idx = np.flatnonzero(pending)
            result[idx[ok]] = cand[ok]
            pending[idx[ok]] = False
            if not pending.any():
                break
        if pending.any():
            # deterministic fallback, practically unreachable
            result[pending] = a[pending] + 1.0 / lam[pending]
        x[far] = result
    return x


def tn_sample(loc, scale, side, key):
    """Exact draw(s) from ``N(loc, scale^2)`` truncated to one side of zero.

    ``key`` is a tuple of non-negative integers (or broadcastable integer
    arrays) naming the random substream; equal keys give equal draws.
    """
    s = side_sign(side)
    loc = np.asarray(loc, dtype=float)
    scale = np.asarray(scale, dtype=float)
    shifted = s * loc
    X = _std_lower_tail_draw(-shifted / scale, tuple(key))
    u = shifted + scale * X
    # rounding at the truncation point must not leave the support
    u = np.maximum(u, np.finfo(float).tiny)
    z = s * u
    return z[()] if np.ndim(z) == 0 else z
