"""Bayesian model averaging over subspace samples and predictive metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .errors import DimensionError
from .net import LOG_2PI, forward
from .subspace import embed

log = logging.getLogger(__name__)

Z95 = 1.959963984540054


@dataclass(frozen=True)
class PredictiveSummary:
    """Moment-matched predictive per test point.

    Regression fills ``mean``/``variance`` and keeps the per-sample
    components (``(J, N)`` arrays) for mixture quantiles and sample
    trajectories; classification fills ``probs`` only.
    """

    mean: Optional[np.ndarray] = None
    variance: Optional[np.ndarray] = None
    component_means: Optional[np.ndarray] = None
    component_variances: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None

    @property
    def is_regression(self) -> bool:
        return self.mean is not None

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass(frozen=True)
class Metrics:
    nll: float
    nll_unnormalized: float = float("nan")
    rmse: float = float("nan")
    accuracy: float = float("nan")
    coverage95: float = float("nan")
    n: int = 0

    def as_dict(self) -> dict:
        return {
            "nll_norm": self.nll,
            "nll_unnorm": self.nll_unnormalized,
            "rmse": self.rmse,
            "accuracy": self.accuracy,
            "coverage95": self.coverage95,
            "n": self.n,
        }


def mixture_moments(means, variances, floor: float = 0.0):
    """Mean and variance of an equal-weight Gaussian mixture along axis 0.

    ``variance = mean(var_j + mu_j^2) - mu_hat^2``, clamped below at
    ``floor`` when cancellation drives it non-positive.
    """
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    mu = means.mean(axis=0)
    var = (variances + means * means).mean(axis=0) - mu * mu
    bad = var <= 0
    if np.any(bad):
        log.warning("mixture variance non-positive at %d points; clamping to %g", int(bad.sum()), floor)
        var = np.where(bad, floor, var)
    return mu, var


def bma_predict(p, samples, test_inputs) -> PredictiveSummary:
    """Average the predictive distributions of ``shift + P z_j`` over the samples."""
    if len(samples) < 1:
        raise ValueError("need at least one sample")
    outs = [forward(p.arch, embed(p.subspace, z), test_inputs) for z in samples.samples]
    if p.arch.is_regression:
        means = np.stack([o.mean for o in outs])
        variances = np.stack([o.variance for o in outs])
        s2 = min(embed(p.subspace, z).global_noise ** 2 for z in samples.samples)
        mu, var = mixture_moments(means, variances, floor=1e-6 * s2)
        return PredictiveSummary(mu, var, means, variances)
    probs = np.mean([o.probs for o in outs], axis=0)
    return PredictiveSummary(probs=probs)


def _mixture_quantile(means, variances, q, iters=200):
    """Per-column quantile of an equal-weight Gaussian mixture by bisection."""
    sd = np.sqrt(variances)
    lo = (means - 10 * sd).min(axis=0)
    hi = (means + 10 * sd).max(axis=0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        cdf = ndtr((mid - means) / sd).mean(axis=0)
        below = cdf < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def evaluate(summary: PredictiveSummary, targets, standardization=(0.0, 1.0), interval: str = "gaussian") -> Metrics:
    """Test metrics for a predictive summary.

    ``targets`` are in the same (standardized) units as the summary and
    ``standardization`` is the ``(mean, std)`` used on the targets. The
    unnormalized NLL is in original target units, i.e. the normalized NLL
    plus ``log(std)``; RMSE is in original units. ``interval`` selects the
    Gaussian-estimator 95% interval or ``"mixture"`` quantiles.
    """
    y = np.asarray(targets, dtype=np.float64).ravel()
    _, y_std = standardization
    if not summary.is_regression:
        probs = summary.probs
        if probs.shape[0] != y.shape[0]:
            raise DimensionError("targets", probs.shape[0], y.shape[0])
        labels = y.astype(np.int64)
        p_true = probs[np.arange(len(labels)), labels]
        nll = -float(np.mean(np.log(p_true)))
        acc = float(np.mean(np.argmax(probs, axis=1) == labels))
        return Metrics(nll=nll, accuracy=acc, n=len(y))

    if summary.mean.shape[0] != y.shape[0]:
        raise DimensionError("targets", summary.mean.shape[0], y.shape[0])
    mu, var = summary.mean, summary.variance
    r = y - mu
    ll = -0.5 * (LOG_2PI + np.log(var) + r * r / var)
    nll = -float(np.mean(ll))
    rmse = float(np.sqrt(np.mean(r * r))) * y_std
    if interval == "gaussian":
        half = Z95 * np.sqrt(var)
        inside = np.abs(r) <= half
    elif interval == "mixture":
        lo = _mixture_quantile(summary.component_means, summary.component_variances, 0.025)
        hi = _mixture_quantile(summary.component_means, summary.component_variances, 0.975)
        inside = (y >= lo) & (y <= hi)
    else:
        raise ValueError(f"unknown interval mode {interval!r}")
    return Metrics(
        nll=nll,
        nll_unnormalized=nll + math.log(y_std),
        rmse=rmse,
        coverage95=float(np.mean(inside)),
        n=len(y),
    )
