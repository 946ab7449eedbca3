"""Curvature and trajectory diagnostics.

Hessian-vector products are central differences of the analytic gradient;
:func:`lanczos` turns any symmetric matvec into Ritz value estimates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .net import ParamVector, value_and_grad_log_likelihood
from .train import DeviationBuffer


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalue_estimates: np.ndarray
    explained_variance: np.ndarray

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["component", "hessian_eigenvalue", "explained_variance"])
            n = max(len(self.eigenvalue_estimates), len(self.explained_variance))
            for i in range(n):
                ev = self.eigenvalue_estimates[i] if i < len(self.eigenvalue_estimates) else ""
                fr = self.explained_variance[i] if i < len(self.explained_variance) else ""
                w.writerow([i + 1, ev, fr])


def fd_hvp(grad_fn, w, v, eps: float = 1e-4) -> np.ndarray:
    """``H v`` from central differences of ``grad_fn`` along the unit direction of ``v``."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if not norm > np.finfo(float).tiny * 1e3:
        raise ValueError("direction vector has (near) zero norm")
    u = v / norm
    return (grad_fn(w + eps * u) - grad_fn(w - eps * u)) / (2 * eps) * norm


def mean_nll_grad(arch, data, raw_global_noise: float):
    """Gradient of the full-batch mean negative log-likelihood over the network weights."""
    n = len(data)

    def grad(weights):
        _, gw, _ = value_and_grad_log_likelihood(arch, ParamVector(weights, raw_global_noise), data)
        return -gw / n

    return grad


def hvp(arch, params: ParamVector, data, v, eps: float = 1e-4) -> np.ndarray:
    """Hessian of the mean NLL (w.r.t. network weights) applied to ``v``."""
    return fd_hvp(mean_nll_grad(arch, data, params.raw_global_noise), params.weights, v, eps)


def lanczos(matvec, dim: int, k_iters: int, seed: int = 0) -> np.ndarray:
    """Ritz values of a symmetric operator after ``k_iters`` Lanczos steps, descending.

    Uses full reorthogonalization. Stops early on breakdown, in which case
    the Ritz values are exact eigenvalues of an invariant subspace.
    """
    if not 1 <= k_iters <= dim:
        raise ValueError(f"k_iters must lie in [1, {dim}]")
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(dim)
    q /= np.linalg.norm(q)
    basis = np.zeros((k_iters, dim))
    alphas, betas = [], []
    scale = 0.0
    for j in range(k_iters):
        basis[j] = q
        r = np.asarray(matvec(q), dtype=np.float64)
        alpha = float(q @ r)
        alphas.append(alpha)
        for _ in range(2):
            r -= basis[: j + 1].T @ (basis[: j + 1] @ r)
        beta = float(np.linalg.norm(r))
        scale = max(scale, abs(alpha), beta)
        if j == k_iters - 1 or beta <= 1e-12 * max(scale, 1.0):
            break
        betas.append(beta)
        q = r / beta
    ritz = eigh_tridiagonal(np.array(alphas), np.array(betas), eigvals_only=True)
    return ritz[::-1]


def trajectory_spectrum(buffer) -> np.ndarray:
    """Explained-variance fractions ``s_i^2 / sum_j s_j^2`` of the deviation matrix, descending."""
    a = buffer.matrix() if isinstance(buffer, DeviationBuffer) else np.asarray(buffer, dtype=np.float64)
    if a.size == 0:
        raise ValueError("deviation buffer is empty")
    sq = np.clip(np.linalg.eigvalsh(a @ a.T), 0.0, None)[::-1]
    total = sq.sum()
    if not total > 0:
        raise ValueError("deviation buffer is all zeros")
    return sq / total
