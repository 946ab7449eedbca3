"""Tempered log-posterior over subspace coordinates.

``log p_T(z | D) = log p(D | shift + P z) / T + log N(z; 0, prior_std^2 I)``
up to an additive constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .net import LOG_2PI, Architecture, Dataset, log_likelihood, value_and_grad_log_likelihood
from .subspace import Subspace, embed

LIKELIHOOD_CHUNK = 512


@dataclass(frozen=True)
class SubspacePosterior:
    subspace: Subspace
    arch: Architecture
    data: Dataset
    temperature: float
    prior_std: float = 1.0
    chunk_size: int = LIKELIHOOD_CHUNK

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not self.prior_std > 0:
            raise ValueError("prior_std must be > 0")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")

    @property
    def dim(self) -> int:
        return self.subspace.dim

    def _check(self, z):
        z = np.asarray(z, dtype=np.float64).ravel()
        if z.shape[0] != self.dim:
            raise DimensionError("subspace coordinates", self.dim, z.shape[0])
        return z

    def _chunks(self):
        n = len(self.data)
        for start in range(0, n, self.chunk_size):
            yield np.arange(start, min(start + self.chunk_size, n))

    def log_likelihood(self, z) -> float:
        """Untempered full-batch log-likelihood, summed chunk by chunk."""
        w = embed(self.subspace, self._check(z))
        return math.fsum(log_likelihood(self.arch, w, self.data, idx) for idx in self._chunks())

    def tempered_log_likelihood(self, z) -> float:
        return self.log_likelihood(z) / self.temperature

    def grad_log_likelihood(self, z) -> np.ndarray:
        """Gradient of the untempered log-likelihood with respect to ``z``."""
        w = embed(self.subspace, self._check(z))
        total = np.zeros(self.subspace.projection.shape[0])
        d = w.weights.shape[0]
        for idx in self._chunks():
            _, gw, gn = value_and_grad_log_likelihood(self.arch, w, self.data, idx)
            total[:d] += gw
            if self.subspace.includes_noise:
                total[d] += gn
        return self.subspace.projection.T @ total

    def grad_tempered_log_likelihood(self, z) -> np.ndarray:
        return self.grad_log_likelihood(z) / self.temperature


def log_prior(p: SubspacePosterior, z) -> float:
    """Normalized isotropic Gaussian log-density ``N(z; 0, prior_std^2 I)``."""
    z = p._check(z)
    k = z.shape[0]
    return -0.5 * k * (LOG_2PI + 2.0 * math.log(p.prior_std)) - 0.5 * float(z @ z) / p.prior_std**2


def grad_log_prior(p: SubspacePosterior, z) -> np.ndarray:
    return -p._check(z) / p.prior_std**2


def log_posterior(p: SubspacePosterior, z) -> float:
    """Unnormalized tempered log-posterior."""
    return p.tempered_log_likelihood(z) + log_prior(p, z)


def grad_log_posterior(p: SubspacePosterior, z) -> np.ndarray:
    return p.grad_tempered_log_likelihood(z) + grad_log_prior(p, z)
