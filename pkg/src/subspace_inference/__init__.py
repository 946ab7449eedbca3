"""Approximate Bayesian inference for small networks in low-dimensional weight subspaces."""

from .errors import ConfigError, DataError, DimensionError, NumericalError, SubspaceInferenceError
from .inference import ChainConfig, SampleSet, VIConfig, VIPosterior, ess_step, fit_vi, run_ess, sample_vi
from .net import (
    Architecture,
    Dataset,
    NetOutput,
    ParamVector,
    forward,
    grad_log_likelihood,
    init_weights,
    log_likelihood,
)
from .posterior import SubspacePosterior, grad_log_posterior, log_posterior, log_prior
from .predict import Metrics, PredictiveSummary, bma_predict, evaluate
from .spectrum import SpectrumReport, hvp, lanczos, trajectory_spectrum
from .subspace import (
    CurveConfig,
    CurveEndpoints,
    Subspace,
    curve_subspace,
    embed,
    find_curve,
    pca_subspace,
    random_subspace,
)
from .train import DeviationBuffer, SwaResult, TrainConfig, run_swa, train_sgd

__version__ = "0.1.0"
