"""Posterior approximation in the subspace.

Both methods work against any *target* object exposing ``dim``,
``prior_std``, ``temperature`` and ``tempered_log_likelihood(z)``; VI also
needs ``grad_tempered_log_likelihood(z)``. :class:`SubspacePosterior` is the
usual target, but simple analytic targets work as well.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, NumericalError
from .net import LOG_2PI, inverse_softplus, sigmoid, softplus

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChainConfig:
    num_samples: int = 30
    burn_in: int = 500
    thinning: int = 1
    seed: int = 0
    max_shrink_iters: int = 1000

    def validate(self):
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if self.thinning < 1:
            raise ConfigError("thinning must be >= 1")
        if self.max_shrink_iters < 1:
            raise ConfigError("max_shrink_iters must be >= 1")


@dataclass(frozen=True)
class VIConfig:
    steps: int = 5000
    learning_rate: float = 0.01
    mc_samples: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    # cosine decay of the step size down to this fraction at the last step
    final_lr_fraction: float = 0.01

    def validate(self):
        if self.steps < 1 or self.mc_samples < 1:
            raise ConfigError("steps and mc_samples must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 < self.final_lr_fraction <= 1:
            raise ConfigError("final_lr_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class SampleSet:
    samples: np.ndarray
    log_posteriors: np.ndarray
    provenance: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        lp = np.array(self.log_posteriors, dtype=np.float64).ravel()
        if s.shape[0] != lp.shape[0]:
            raise ValueError("samples and log_posteriors have different lengths")
        if not np.all(np.isfinite(s)):
            raise NumericalError("non-finite subspace sample")
        if self.provenance not in ("ess", "vi", "prior"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "log_posteriors", lp)

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class VIPosterior:
    mean: np.ndarray
    raw_std: np.ndarray
    elbo_trace: tuple = ()

    @property
    def std(self) -> np.ndarray:
        return softplus(self.raw_std)


class EssStep(NamedTuple):
    z: np.ndarray
    n_shrinks: int
    loglik: float


def gaussian_log_density(z, std: float) -> float:
    z = np.asarray(z, dtype=np.float64)
    return -0.5 * z.size * (LOG_2PI + 2.0 * math.log(std)) - 0.5 * float(z @ z) / std**2


def ess_step(
    z,
    loglik: Callable[[np.ndarray], float],
    prior_std: float,
    rng: np.random.Generator,
    cur_loglik: float = None,
    max_shrink_iters: int = 1000,
) -> EssStep:
    """One elliptical slice sampling update under a ``N(0, prior_std^2 I)`` prior.

    ``loglik`` must not include the prior. ``n_shrinks`` counts rejected
    proposals before acceptance.
    """
    z = np.asarray(z, dtype=np.float64)
    if cur_loglik is None:
        cur_loglik = loglik(z)
    if not math.isfinite(cur_loglik):
        raise NumericalError("current state has non-finite log-likelihood")
    nu = prior_std * rng.standard_normal(z.shape)
    threshold = cur_loglik + math.log(rng.uniform())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = theta - 2.0 * math.pi, theta
    for n_shrinks in range(max_shrink_iters + 1):
        proposal = z * math.cos(theta) + nu * math.sin(theta)
        value = loglik(proposal)
        if value > threshold:
            return EssStep(proposal, n_shrinks, value)
        if theta < 0:
            lo = theta
        else:
            hi = theta
        theta = rng.uniform(lo, hi)
    raise NumericalError(f"slice shrank more than {max_shrink_iters} times; log-likelihood may be NaN")


def run_ess(p, z0=None, config: ChainConfig = ChainConfig()) -> SampleSet:
    """Elliptical slice sampling chain on the tempered likelihood of ``p``.

    Keeps every ``thinning``-th state after ``burn_in`` updates until
    ``num_samples`` states are stored, with their tempered log-posteriors.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    z = np.zeros(p.dim) if z0 is None else np.array(z0, dtype=np.float64)
    loglik = p.tempered_log_likelihood
    cur = loglik(z)
    kept, log_posts = [], []
    total_updates = config.burn_in + config.num_samples * config.thinning
    shrinks = 0
    for i in range(1, total_updates + 1):
        step = ess_step(z, loglik, p.prior_std, rng, cur, config.max_shrink_iters)
        z, cur = step.z, step.loglik
        shrinks += step.n_shrinks
        if i > config.burn_in and (i - config.burn_in) % config.thinning == 0:
            kept.append(z.copy())
            log_posts.append(cur + gaussian_log_density(z, p.prior_std))
    meta = {
        "temperature": float(p.temperature),
        "prior_std": float(p.prior_std),
        "seed": config.seed,
        "burn_in": config.burn_in,
        "thinning": config.thinning,
        "mean_shrinks": shrinks / total_updates,
    }
    log.debug("ESS done: %d updates, %.2f shrinks/update", total_updates, meta["mean_shrinks"])
    return SampleSet(np.array(kept), np.array(log_posts), "ess", meta)


def gaussian_kl(mean, std, prior_std: float) -> float:
    """``KL(N(mean, diag(std^2)) || N(0, prior_std^2 I))``."""
    mean = np.asarray(mean, float)
    std = np.asarray(std, float)
    return float(
        np.sum(np.log(prior_std / std) + (std**2 + mean**2) / (2 * prior_std**2) - 0.5)
    )


def elbo_and_grad(target, mean, raw_std, eps):
    """Reparameterized ELBO estimate at fixed noise ``eps`` (shape ``(S, K)``).

    Returns ``(elbo, d_mean, d_raw_std)``; the KL part is exact.
    """
    std = softplus(raw_std)
    eps = np.atleast_2d(eps)
    ell = 0.0
    g_mean = np.zeros_like(mean)
    g_std = np.zeros_like(mean)
    for e in eps:
        z = mean + std * e
        ell += target.tempered_log_likelihood(z)
        g = target.grad_tempered_log_likelihood(z)
        g_mean += g
        g_std += g * e
    s = eps.shape[0]
    sigma2 = target.prior_std**2
    elbo = ell / s - gaussian_kl(mean, std, target.prior_std)
    g_mean = g_mean / s - mean / sigma2
    g_std = g_std / s - (std / sigma2 - 1.0 / std)
    return elbo, g_mean, g_std * sigmoid(raw_std)


def fit_vi(p, config: VIConfig = VIConfig()) -> VIPosterior:
    """Fully-factorized Gaussian VI by stochastic ELBO ascent with Adam.

    The step size follows a cosine schedule from ``learning_rate`` down to
    ``learning_rate * final_lr_fraction`` so the last iterate is not
    dominated by gradient noise.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    k = p.dim
    theta = np.concatenate([np.zeros(k), np.full(k, float(inverse_softplus(0.1 * p.prior_std)))])
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    trace = []
    for i in range(1, config.steps + 1):
        eps = rng.standard_normal((config.mc_samples, k))
        elbo, g_mean, g_raw = elbo_and_grad(p, theta[:k], theta[k:], eps)
        grad = np.concatenate([g_mean, g_raw])
        if not (math.isfinite(elbo) and np.all(np.isfinite(grad))):
            raise NumericalError("non-finite ELBO", step=i)
        trace.append(elbo)
        m1 = config.beta1 * m1 + (1 - config.beta1) * grad
        m2 = config.beta2 * m2 + (1 - config.beta2) * grad * grad
        m1_hat = m1 / (1 - config.beta1**i)
        m2_hat = m2 / (1 - config.beta2**i)
        f = config.final_lr_fraction
        lr = config.learning_rate * (f + (1 - f) * 0.5 * (1 + math.cos(math.pi * (i - 1) / config.steps)))
        theta = theta + lr * m1_hat / (np.sqrt(m2_hat) + 1e-8)
    return VIPosterior(theta[:k].copy(), theta[k:].copy(), tuple(trace))


def sample_vi(q: VIPosterior, num_samples: int, seed: int, target=None) -> SampleSet:
    """Independent draws from ``q``; log-posteriors are filled in when ``target`` is given."""
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((num_samples, q.mean.shape[0]))
    z = q.mean + q.std * eps
    if target is None:
        lp = np.full(num_samples, np.nan)
    else:
        lp = np.array([target.tempered_log_likelihood(zi) + gaussian_log_density(zi, target.prior_std) for zi in z])
    return SampleSet(z, lp, "vi", {"seed": seed})
