"""Affine subspaces ``{shift + P z}`` of weight space and their construction.

The raw global-noise parameter is normally not a subspace coordinate: it is
carried along from the shift. :func:`with_noise_coordinate` appends it as
an extra coordinate for callers that want it sampled too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, NumericalError, SubspaceInferenceError
from .net import Architecture, Dataset, ParamVector
from .train import DeviationBuffer, loss_and_grad, minibatches


class DegenerateSubspaceError(SubspaceInferenceError, ValueError):
    pass


@dataclass(frozen=True)
class Subspace:
    """``projection`` is ``(d, K)`` over network weights, or ``(d + 1, K)``
    when the last row acts on the raw global noise."""

    shift: ParamVector
    projection: np.ndarray
    kind: str
    singular_values: Optional[np.ndarray] = None

    def __post_init__(self):
        p = np.array(self.projection, dtype=np.float64)
        if p.ndim != 2:
            raise DimensionError("projection rank", 2, p.ndim)
        d = self.shift.weights.shape[0]
        if p.shape[0] not in (d, d + 1):
            raise DimensionError("projection rows", d, p.shape[0])
        p.setflags(write=False)
        object.__setattr__(self, "projection", p)

    @property
    def dim(self) -> int:
        return self.projection.shape[1]

    @property
    def includes_noise(self) -> bool:
        return self.projection.shape[0] == self.shift.weights.shape[0] + 1


def embed(s: Subspace, z) -> ParamVector:
    """Map subspace coordinates ``z`` to the full parameter vector ``shift + P z``."""
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.shape[0] != s.dim:
        raise DimensionError("subspace coordinates", s.dim, z.shape[0])
    step = s.projection @ z
    if s.includes_noise:
        return ParamVector(s.shift.weights + step[:-1], s.shift.raw_global_noise + step[-1])
    return ParamVector(s.shift.weights + step, s.shift.raw_global_noise)


def with_noise_coordinate(s: Subspace, scale: float = 1.0) -> Subspace:
    """Append the raw global noise as coordinate ``K + 1``."""
    if s.includes_noise:
        return s
    d, k = s.projection.shape
    p = np.zeros((d + 1, k + 1))
    p[:d, :k] = s.projection
    p[d, k] = scale
    return Subspace(s.shift, p, s.kind, s.singular_values)


def random_subspace(d: int, k: int, shift: ParamVector, seed: int) -> Subspace:
    """``k`` independent standard-normal directions, each scaled to unit norm."""
    if k < 1:
        raise ValueError("K must be >= 1")
    if k > d:
        raise ValueError(f"K={k} exceeds parameter dimension d={d}")
    if shift.weights.shape[0] != d:
        raise DimensionError("shift length", d, shift.weights.shape[0])
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((d, k))
    v /= np.linalg.norm(v, axis=0)
    return Subspace(shift, v, "random")


def top_singular_triples(a: np.ndarray, k: int, rank_tol: float = 1e-12):
    """Top-``k`` singular values and right singular vectors of a wide matrix.

    Uses the eigendecomposition of the small Gram matrix ``A A^T`` and
    recovers ``v_i = A^T u_i / s_i``. Each ``v_i`` is signed so that its
    largest-magnitude entry is positive. Returns ``(s, V)`` with ``V`` of
    shape ``(k, d)``. Directions whose Gram eigenvalue is at most
    ``rank_tol`` times the largest count as rank-deficient; the Gram matrix
    squares the condition number, so singular values below about
    ``sqrt(rank_tol)`` relative to the top one cannot be resolved anyway.
    """
    a = np.asarray(a, dtype=np.float64)
    m = a.shape[0]
    if k > m:
        raise ValueError(f"K={k} exceeds the number of deviation columns M={m}")
    gram = a @ a.T
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    tol = rank_tol * max(evals[0], np.finfo(float).tiny) if m else 0.0
    rank = int(np.sum(evals > tol))
    sv = np.sqrt(evals)
    if rank < k:
        raise DegenerateSubspaceError(f"deviation matrix has effective rank {rank} < K={k}")
    s = sv[:k]
    v = (a.T @ evecs[:, :k]) / s
    # one Gram-Schmidt pass removes the O(eps * cond) loss of orthogonality
    v, r = np.linalg.qr(v)
    v *= np.sign(np.diag(r))
    v = v.T
    for i in range(k):
        j = int(np.argmax(np.abs(v[i])))
        if v[i, j] < 0:
            v[i] = -v[i]
    return s, v


def pca_subspace(buffer, w_swa: ParamVector, k: int, scale: str = "sqrt_m_minus_1") -> Subspace:
    """PCA subspace of the SWA deviations.

    Column ``i`` of the projection is ``s_i v_i / sqrt(M - 1)`` with ``s_i``
    the ``i``-th singular value of the ``(M, d)`` deviation matrix. With
    ``scale="singular_values"`` the ``sqrt(M - 1)`` divisor is dropped and
    with ``scale="unit"`` the columns are the bare singular vectors.
    """
    a = buffer.matrix() if isinstance(buffer, DeviationBuffer) else np.asarray(buffer, float)
    m = a.shape[0]
    s, v = top_singular_triples(a, k)
    if scale == "sqrt_m_minus_1":
        factor = s / math.sqrt(max(m - 1, 1))
    elif scale == "singular_values":
        factor = s
    elif scale == "unit":
        factor = np.ones_like(s)
    else:
        raise ValueError(f"unknown PCA scale {scale!r}")
    return Subspace(w_swa, (v * factor[:, None]).T, "pca", singular_values=s)


@dataclass(frozen=True)
class CurveEndpoints:
    w0: ParamVector
    w1: ParamVector
    w_half: ParamVector

    def __post_init__(self):
        n = self.w0.weights.shape[0]
        for name in ("w1", "w_half"):
            got = getattr(self, name).weights.shape[0]
            if got != n:
                raise DimensionError(f"{name} length", n, got)


def curve_subspace(endpoints: CurveEndpoints, tol: float = 1e-10) -> Subspace:
    """Plane through both endpoints and the curve midpoint, centred between the endpoints.

    The raw global noise of the shift is the average of the endpoints'.
    """
    w0 = endpoints.w0.weights
    w1 = endpoints.w1.weights
    center = 0.5 * (w0 + w1)
    u = w0 - center
    nu = float(np.linalg.norm(u))
    if nu <= tol:
        raise DegenerateSubspaceError(f"endpoints coincide: |w0 - shift| = {nu:.3e}")
    v = endpoints.w_half.weights - center
    nv = float(np.linalg.norm(v))
    if nv <= tol:
        raise DegenerateSubspaceError(f"midpoint on the chord centre: |w_half - shift| = {nv:.3e}")
    v1 = u / nu
    v2 = v / nv
    off_line = float(np.linalg.norm(v2 - (v2 @ v1) * v1))
    if off_line <= 1e-8:
        raise DegenerateSubspaceError(f"midpoint collinear with endpoints: off-line norm {off_line:.3e}")
    noise = 0.5 * (endpoints.w0.raw_global_noise + endpoints.w1.raw_global_noise)
    return Subspace(ParamVector(center, noise), np.column_stack([v1, v2]), "curve")


def curve_coordinates(s: Subspace, endpoints: CurveEndpoints):
    """Subspace coordinates of ``w0``, ``w1`` and ``w_half``."""
    r0 = float(np.linalg.norm(endpoints.w0.weights - s.shift.weights))
    rh = float(np.linalg.norm(endpoints.w_half.weights - s.shift.weights))
    return np.array([r0, 0.0]), np.array([-r0, 0.0]), np.array([0.0, rh])


def bezier(t: float, w0, theta, w1):
    return (1 - t) ** 2 * w0 + 2 * t * (1 - t) * theta + t**2 * w1


@dataclass(frozen=True)
class CurveConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 0.0
    num_steps: int = 2000
    batch_size: int = 32
    seed: int = 0


def fit_bezier_bend(
    loss_grad: Callable[[np.ndarray, np.random.Generator], tuple],
    w0: np.ndarray,
    w1: np.ndarray,
    config: CurveConfig,
) -> np.ndarray:
    """Train the bend point of a quadratic Bezier curve between ``w0`` and ``w1``.

    ``loss_grad(w, rng)`` returns a (possibly stochastic) loss and its
    gradient at ``w``. Each step samples one ``t ~ U[0, 1]`` and takes a
    heavy-ball step on ``theta`` using ``d phi / d theta = 2 t (1 - t)``.
    The bend starts at the chord midpoint.
    """
    rng = np.random.default_rng(config.seed)
    w0 = np.asarray(w0, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    theta = 0.5 * (w0 + w1)
    velocity = np.zeros_like(theta)
    for i in range(1, config.num_steps + 1):
        t = rng.uniform()
        loss, g = loss_grad(bezier(t, w0, theta, w1), rng)
        if not (math.isfinite(loss) and np.all(np.isfinite(g))):
            raise NumericalError("non-finite loss along curve", step=i)
        velocity = config.momentum * velocity + 2 * t * (1 - t) * g
        theta = theta - config.learning_rate * velocity
    return theta


def find_curve(
    arch: Architecture,
    w0: ParamVector,
    w1: ParamVector,
    data: Dataset,
    config: CurveConfig,
    return_bend: bool = False,
):
    """Fit a low-loss Bezier curve between two trained networks.

    The curve lives in the flat ``[weights, raw_noise]`` space and the
    loss is the mini-batch negative mean log-likelihood. Returns the curve
    midpoint (and the bend when ``return_bend``).
    """
    batches = minibatches(len(data), min(config.batch_size, len(data)), np.random.default_rng(config.seed + 1))

    def loss_grad(flat, _rng):
        return loss_and_grad(arch, flat, data, next(batches), config.weight_decay)

    a0, a1 = w0.to_array(), w1.to_array()
    theta = fit_bezier_bend(loss_grad, a0, a1, config)
    half = ParamVector.from_array(bezier(0.5, a0, theta, a1))
    if return_bend:
        return half, ParamVector.from_array(theta)
    return half
