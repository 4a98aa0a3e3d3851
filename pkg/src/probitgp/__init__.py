"""Predictive probabilities and marginal likelihoods for probit models with
Gaussian-process priors.

Two predictors are provided: a ratio of multivariate normal probabilities
estimated by separation of variables on a tile-low-rank Cholesky factor, and
a mean-field variational approximation of the truncated-normal latent vector.
"""

from .errors import CholeskyError, NumericalError, ProbitGPError, ValidationError
from .harness import (
    Dataset,
    MetricsReport,
    RunConfig,
    compute_auc,
    compute_mse,
    estimate_alpha,
    predict_batch,
    simulate_dataset,
)
from .linalg import (
    KernelSpec,
    TlrMatrix,
    build_covariance,
    kernel_eval,
    tlr_compress,
    tlr_row_matvec,
)
from .model import (
    ProbitGpModel,
    conditional_gp_params,
    extend_problem,
    latent_params,
    marginal_likelihood,
    predict_ratio,
    sun_params,
)
from .mvn import (
    McConfig,
    MvnProblem,
    ProbEstimate,
    block_reorder,
    sov_estimate,
    tlr_sov_estimate,
    univariate_reorder,
)
from .truncnorm import tn_mean, tn_sample
from .vb import TnFactor, TnFactorSet, cavi_fit, exact_tn_predict, predict_vb

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
