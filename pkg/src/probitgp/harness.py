"""Simulation study helpers: synthetic grid data, kernel-range selection by
marginal likelihood, batch prediction and its metrics."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from ._random import STREAM_SIMULATE, derive_seed
from .errors import ValidationError
from .linalg import KernelSpec, dense_cholesky
from .model import DEFAULT_TOL, ProbitGpModel, marginal_likelihood
from .mvn import McConfig, ProbEstimate
from .vb import DEFAULT_CAVI_MAX_ITER, DEFAULT_CAVI_TOL, cavi_fit, predict_vb


@dataclass(frozen=True, eq=False)
class Dataset:
    locs: np.ndarray
    y: np.ndarray
    truth_probs: np.ndarray | None = None
    holdout_locs: np.ndarray | None = None
    holdout_probs: np.ndarray | None = None
    holdout_y: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.y)
        if len(self.locs) != n:
            raise ValidationError("locations and responses differ in length")
        if self.truth_probs is not None:
            if len(self.truth_probs) != n:
                raise ValidationError("truth_probs length does not match y")
            if np.any((self.truth_probs <= 0) | (self.truth_probs >= 1)):
                raise ValidationError("truth_probs must lie in (0, 1)")
        if self.holdout_locs is not None:
            h = len(self.holdout_locs)
            for arr in (self.holdout_probs, self.holdout_y):
                if arr is not None and len(arr) != h:
                    raise ValidationError("holdout columns differ in length")

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class RunConfig:
    method: str = "tlr"
    R: int = 20_000
    seed: int = 0
    block_size: int | None = None
    trunc_tol: float = DEFAULT_TOL
    alpha: float | None = None
    alpha_min: float = 15.0
    alpha_max: float = 45.0
    alpha_count: int = 60
    cavi_tol: float = DEFAULT_CAVI_TOL
    cavi_max_iter: int = DEFAULT_CAVI_MAX_ITER

    def __post_init__(self):
        if self.method not in ("tlr", "vb"):
            raise ValidationError(f"method must be 'tlr' or 'vb', got {self.method!r}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValidationError("alpha must be positive")
        if self.alpha_count < 1 or not 0 < self.alpha_min <= self.alpha_max:
            raise ValidationError("alpha grid needs 0 < min <= max and count >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def grid(self):
        return (self.alpha_min, self.alpha_max, self.alpha_count)

    def mc(self) -> McConfig:
        return McConfig(R=self.R, seed=self.seed)


@dataclass
class MetricsReport:
    method: str
    n: int
    R: int
    seed: int
    alpha: float
    n_predictions: int
    mse: float | None = None
    auc: float | None = None
    auc_defined: bool = False
    per_prediction_seconds: float = float("nan")
    setup_seconds: float = float("nan")
    alpha_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        d.update(d.pop("extra"))
        if not timing:
            for key in ("per_prediction_seconds", "setup_seconds", "alpha_seconds"):
                d.pop(key)
        return d


def grid_locations(grid_size: int) -> np.ndarray:
    """``grid_size^2`` points ``(j/g, k/g)`` for ``j, k = 1..g``, row-major."""
    g = np.arange(1, grid_size + 1) / grid_size
    return np.array([(u, v) for u in g for v in g])


def _holdout_locations(scheme, count, grid_size, rng):
    if scheme == "random":
        return rng.uniform(0.0, 1.0, size=(count, 2))
    if scheme == "grid":
        # midpoints between training grid lines never coincide with them
        side = math.isqrt(count - 1) + 1
        if side > grid_size:
            raise ValidationError("grid holdout needs holdout_count <= grid_size^2")
        mid = (np.arange(grid_size) + 0.5) / grid_size
        pick = mid[np.round(np.linspace(0, grid_size - 1, side)).astype(int)]
        pts = np.array([(u, v) for u in pick for v in pick])
        return pts[:count]
    raise ValidationError(f"holdout scheme must be 'random' or 'grid', got {scheme!r}")


def simulate_dataset(grid_size: int, alpha: float, seed: int, holdout_scheme: str = "random",
                     holdout_count: int = 100) -> Dataset:
    """Binary responses on a regular grid in the unit square driven by one
    zero-mean GP draw shared with the holdout points."""
    if grid_size < 2:
        raise ValidationError("grid_size must be at least 2")
    if holdout_count < 1:
        raise ValidationError("holdout_count must be positive")
    rng = np.random.default_rng(derive_seed(seed, STREAM_SIMULATE))
    train = grid_locations(grid_size)
    hold = _holdout_locations(holdout_scheme, holdout_count, grid_size, rng)
    X = np.vstack([train, hold])
    kernel = KernelSpec(alpha)
    L = dense_cholesky(kernel.cross(X, X))
    f0 = L @ rng.standard_normal(len(X))
    probs = ndtr(f0)
    ys = (rng.uniform(size=len(X)) < probs).astype(int)
    n = len(train)
    return Dataset(train, ys[:n], probs[:n], hold, probs[n:], ys[n:])


def compute_mse(estimates, truth) -> float:
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise ValidationError(f"length mismatch: {estimates.shape} vs {truth.shape}")
    return float(np.mean((estimates - truth) ** 2))


def compute_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ValidationError("scores and labels differ in length")
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise ValidationError("AUC needs both classes among the labels")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def build_model(dataset: Dataset, alpha: float) -> ProbitGpModel:
    return ProbitGpModel(dataset.locs, dataset.y, KernelSpec(alpha))


def estimate_alpha(dataset: Dataset, grid, cfg: RunConfig):
    """Grid search for the kernel decay maximizing the tile-low-rank
    marginal likelihood estimate, with one seed shared across the grid.

    Returns ``(alpha_hat, curve)``; ``curve`` holds
    ``(alpha, log_estimate, std_error_of_log)`` per grid point.  Ties go to
    the smaller alpha.
    """
    lo, hi, count = grid
    if count < 1 or not lo <= hi:
        raise ValidationError("alpha grid needs min <= max and count >= 1")
    alphas = np.linspace(lo, hi, int(count))
    curve = []
    for a in alphas:
        est = marginal_likelihood(build_model(dataset, float(a)), cfg.mc(), "tlr",
                                  cfg.block_size, cfg.trunc_tol)
        curve.append((float(a), est.log_value, est.rel_error))
    best = int(np.argmax([c[1] for c in curve]))
    return curve[best][0], curve


def predict_batch(dataset: Dataset, cfg: RunConfig):
    """Predict every holdout point with the configured method.

    Shared state (reorder and factor, or the variational fit) is built once
    and timed separately from the prediction loop.
    """
    if dataset.holdout_locs is None or len(dataset.holdout_locs) == 0:
        raise ValidationError("dataset has no holdout points")
    t0 = time.perf_counter()
    curve = None
    if cfg.alpha is None:
        alpha, curve = estimate_alpha(dataset, cfg.grid, cfg)
    else:
        alpha = cfg.alpha
    alpha_seconds = time.perf_counter() - t0

    model = build_model(dataset, alpha)
    mc = cfg.mc()
    t0 = time.perf_counter()
    extra = {}
    if cfg.method == "tlr":
        predictor = model.ratio_predictor(mc, cfg.block_size, cfg.trunc_tol)
        extra["block_size"] = predictor.block_size
        predict = predictor.predict
    else:
        factors = cavi_fit(model, cfg.cavi_tol, cfg.cavi_max_iter)
        extra.update(cavi_iterations=factors.iterations, cavi_converged=factors.converged)
        predict = lambda x: predict_vb(model, factors, x, mc)  # noqa: E731
    setup = time.perf_counter() - t0

    t0 = time.perf_counter()
    estimates: list[ProbEstimate] = [predict(x) for x in dataset.holdout_locs]
    per_pred = (time.perf_counter() - t0) / len(estimates)

    probs = np.array([e.value for e in estimates])
    report = MetricsReport(cfg.method, dataset.n, cfg.R, cfg.seed, float(alpha), len(estimates),
                           per_prediction_seconds=per_pred, setup_seconds=setup,
                           alpha_seconds=alpha_seconds, extra=extra)
    if dataset.holdout_probs is not None:
        report.mse = compute_mse(probs, dataset.holdout_probs)
    if dataset.holdout_y is not None:
        labels = np.asarray(dataset.holdout_y)
        if 0 < labels.sum() < labels.size:
            report.auc = compute_auc(probs, labels)
            report.auc_defined = True
    if curve is not None:
        report.extra["alpha_curve"] = [list(c) for c in curve]
    return estimates, report

