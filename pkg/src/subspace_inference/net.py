"""Fully-connected networks over a flat weight vector.

Weights are stored layer by layer: for each linear layer the ``(out, in)``
weight matrix in row-major order followed by its ``out`` biases. A
Gaussian-head network emits two raw outputs per input, the predictive mean
and a raw value mapped through softplus to a standard deviation; together
with a learned global noise ``s = softplus(raw_global_noise)`` the
predictive variance is ``s**2 + softplus(raw)**2``.

Everything is float64 and evaluated with plain numpy; gradients come from a
hand-written backward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)

# softplus^-1(1); softplus of this value rounds to exactly 1.0
RAW_UNIT_NOISE = math.log(math.expm1(1.0))


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class Architecture:
    """MLP shape plus output head.

    ``head`` is ``"gaussian"`` (two outputs: mean, raw std),
    ``"homoscedastic"`` (one output: the mean; variance is the global
    noise alone) or ``"categorical"`` (``num_classes`` logits). With
    ``augment_square_input`` the network sees ``[x, x**2]`` instead of ``x``.
    """

    input_dim: int
    hidden_sizes: tuple = ()
    head: str = "gaussian"
    num_classes: int = 0
    activation: str = "relu"
    augment_square_input: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden layer sizes must be >= 1")
        if self.head not in ("gaussian", "homoscedastic", "categorical"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "categorical" and self.num_classes < 2:
            raise ValueError("categorical head needs num_classes >= 2")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def output_dim(self) -> int:
        if self.head == "gaussian":
            return 2
        return 1 if self.head == "homoscedastic" else self.num_classes

    @property
    def is_regression(self) -> bool:
        return self.head != "categorical"

    @property
    def layer_sizes(self) -> tuple:
        first = self.input_dim * (2 if self.augment_square_input else 1)
        return (first, *self.hidden_sizes, self.output_dim)

    @property
    def num_weights(self) -> int:
        sizes = self.layer_sizes
        return sum((sizes[i] + 1) * sizes[i + 1] for i in range(len(sizes) - 1))

    def layer_slices(self):
        """Yield ``(w_slice, w_shape, b_slice)`` for each linear layer."""
        sizes = self.layer_sizes
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            yield w, (fan_out, fan_in), b

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "head": self.head,
            "num_classes": self.num_classes,
            "activation": self.activation,
            "augment_square_input": self.augment_square_input,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_sizes=tuple(d.get("hidden_sizes", ())),
            head=d.get("head", "gaussian"),
            num_classes=int(d.get("num_classes", 0)),
            activation=d.get("activation", "relu"),
            augment_square_input=bool(d.get("augment_square_input", False)),
        )


@dataclass(frozen=True)
class ParamVector:
    """Flat network weights plus the raw global-noise scalar."""

    weights: np.ndarray
    raw_global_noise: float = RAW_UNIT_NOISE

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "raw_global_noise", float(self.raw_global_noise))

    @property
    def global_noise(self) -> float:
        return float(softplus(self.raw_global_noise))

    def to_array(self) -> np.ndarray:
        """Weights with the raw noise appended as the last entry."""
        return np.append(self.weights, self.raw_global_noise)

    @classmethod
    def from_array(cls, flat) -> "ParamVector":
        flat = np.asarray(flat, dtype=np.float64)
        return cls(flat[:-1], float(flat[-1]))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.weights)) and math.isfinite(self.raw_global_noise))

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and self.raw_global_noise == other.raw_global_noise
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    """Inputs and targets, plus the statistics used to standardize them.

    ``input_mean``/``input_std`` are per-column; ``target_mean``/``target_std``
    are scalars. Identity statistics mean the data is in original units.
    """

    inputs: np.ndarray
    targets: np.ndarray
    input_mean: Optional[np.ndarray] = None
    input_std: Optional[np.ndarray] = None
    target_mean: float = 0.0
    target_std: float = 1.0
    column_names: Sequence[str] = field(default=())

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        y = np.array(self.targets, dtype=np.float64).ravel()
        if x.shape[0] < 1:
            raise ValueError("dataset must contain at least one row")
        if x.shape[0] != y.shape[0]:
            raise DimensionError("targets", x.shape[0], y.shape[0])
        d = x.shape[1]
        mean = np.zeros(d) if self.input_mean is None else np.asarray(self.input_mean, float)
        std = np.ones(d) if self.input_std is None else np.asarray(self.input_std, float)
        if np.any(std <= 0) or self.target_std <= 0:
            raise ValueError("standardization stds must be > 0")
        for a in (x, y, mean, std):
            a.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "input_mean", mean)
        object.__setattr__(self, "input_std", std)
        object.__setattr__(self, "target_mean", float(self.target_mean))
        object.__setattr__(self, "target_std", float(self.target_std))
        object.__setattr__(self, "column_names", tuple(self.column_names))

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def num_features(self) -> int:
        return self.inputs.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.inputs[index],
            self.targets[index],
            self.input_mean,
            self.input_std,
            self.target_mean,
            self.target_std,
            self.column_names,
        )


@dataclass(frozen=True)
class NetOutput:
    """Batched network output. ``mean``/``variance`` for the Gaussian head,
    ``logits`` for the categorical head; the other fields are ``None``."""

    mean: Optional[np.ndarray] = None
    variance: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None

    @property
    def probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


def _check_params(arch: Architecture, params: ParamVector):
    if params.weights.shape[0] != arch.num_weights:
        raise DimensionError("parameter vector length", arch.num_weights, params.weights.shape[0])


def _prepare_inputs(arch: Architecture, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :] if arch.input_dim > 1 or x.shape[0] == 1 else x[:, None]
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise DimensionError("input width", arch.input_dim, x.shape[-1])
    if arch.augment_square_input:
        x = np.concatenate([x, x * x], axis=1)
    return x


def _layers(arch, weights):
    return [(weights[ws].reshape(shape), weights[bs]) for ws, shape, bs in arch.layer_slices()]


def _activate(arch, pre):
    return np.maximum(pre, 0.0) if arch.activation == "relu" else np.tanh(pre)


def _activation_grad(arch, pre, post):
    if arch.activation == "relu":
        return (pre > 0).astype(np.float64)
    return 1.0 - post * post


def _forward_raw(arch, weights, x):
    """Return raw outputs and the cached (pre, post) activations per layer."""
    layers = _layers(arch, weights)
    cache = []
    h = x
    for i, (w, b) in enumerate(layers):
        pre = h @ w.T + b
        if i < len(layers) - 1:
            post = _activate(arch, pre)
            cache.append((h, pre, post))
            h = post
        else:
            cache.append((h, pre, None))
            h = pre
    return h, cache, layers


def _gaussian_moments(raw, raw_global_noise):
    s = softplus(raw_global_noise)
    if raw.shape[1] == 1:
        return raw[:, 0], np.full(raw.shape[0], s * s)
    sigma_w = softplus(raw[:, 1])
    return raw[:, 0], s * s + sigma_w * sigma_w


def forward(arch: Architecture, params: ParamVector, x) -> NetOutput:
    """Evaluate the network on one input vector or an ``(N, input_dim)`` batch."""
    _check_params(arch, params)
    x = _prepare_inputs(arch, x)
    raw, _, _ = _forward_raw(arch, params.weights, x)
    if arch.is_regression:
        mean, var = _gaussian_moments(raw, params.raw_global_noise)
        return NetOutput(mean=mean, variance=var)
    return NetOutput(logits=raw)


def _select(data: Dataset, subset):
    if subset is None:
        return data.inputs, data.targets, None
    idx = np.sort(np.asarray(subset, dtype=np.int64).ravel())
    if idx.size and (idx[0] < 0 or idx[-1] >= len(data)):
        raise IndexError(f"subset index out of range for dataset of size {len(data)}")
    return data.inputs[idx], data.targets[idx], idx


def pointwise_log_likelihood(arch: Architecture, params: ParamVector, data: Dataset, subset=None):
    """Per-point log densities, in ascending index order of ``subset``."""
    _check_params(arch, params)
    x, y, _ = _select(data, subset)
    raw, _, _ = _forward_raw(arch, params.weights, _prepare_inputs(arch, x))
    return _pointwise_from_raw(arch, raw, y, params.raw_global_noise)


def _pointwise_from_raw(arch, raw, y, raw_global_noise):
    if arch.is_regression:
        mean, var = _gaussian_moments(raw, raw_global_noise)
        r = y - mean
        return -0.5 * (LOG_2PI + np.log(var) + r * r / var)
    labels = y.astype(np.int64)
    shifted = raw - raw.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return shifted[np.arange(len(labels)), labels] - log_norm


def _raise_if_nonfinite(values, idx):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        where = int(bad[0] if idx is None else idx[bad[0]])
        raise NumericalError("non-finite log-likelihood", index=where)


def log_likelihood(arch: Architecture, params: ParamVector, data: Dataset, subset=None) -> float:
    """Summed (not averaged) log-likelihood over ``subset`` (default: all rows).

    Subset indices are sorted first, so the result does not depend on the
    order they are given in.
    """
    _check_params(arch, params)
    x, y, idx = _select(data, subset)
    raw, _, _ = _forward_raw(arch, params.weights, _prepare_inputs(arch, x))
    values = _pointwise_from_raw(arch, raw, y, params.raw_global_noise)
    _raise_if_nonfinite(values, idx)
    return float(np.sum(values))


def value_and_grad_log_likelihood(arch: Architecture, params: ParamVector, data: Dataset, subset=None):
    """Return ``(log_likelihood, grad_weights, grad_raw_global_noise)``."""
    _check_params(arch, params)
    x, y, idx = _select(data, subset)
    raw, cache, layers = _forward_raw(arch, params.weights, _prepare_inputs(arch, x))
    values = _pointwise_from_raw(arch, raw, y, params.raw_global_noise)
    _raise_if_nonfinite(values, idx)

    g_noise = 0.0
    if arch.is_regression:
        mean, var = _gaussian_moments(raw, params.raw_global_noise)
        r = y - mean
        d_var = 0.5 * (r * r / var - 1.0) / var
        delta = np.empty_like(raw)
        delta[:, 0] = r / var
        if arch.head == "gaussian":
            delta[:, 1] = d_var * 2.0 * softplus(raw[:, 1]) * sigmoid(raw[:, 1])
        s = softplus(params.raw_global_noise)
        g_noise = float(np.sum(d_var) * 2.0 * s * sigmoid(params.raw_global_noise))
    else:
        labels = y.astype(np.int64)
        shifted = raw - raw.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        delta = -p
        delta[np.arange(len(labels)), labels] += 1.0

    grad = np.empty(arch.num_weights)
    slices = list(arch.layer_slices())
    for i in range(len(layers) - 1, -1, -1):
        h_in, _, _ = cache[i]
        ws, _, bs = slices[i]
        grad[ws] = (delta.T @ h_in).ravel()
        grad[bs] = delta.sum(axis=0)
        if i > 0:
            _, pre, post = cache[i - 1]
            delta = (delta @ layers[i][0]) * _activation_grad(arch, pre, post)
    return float(np.sum(values)), grad, g_noise


def grad_log_likelihood(arch: Architecture, params: ParamVector, data: Dataset, subset=None) -> ParamVector:
    """Gradient of :func:`log_likelihood`, packaged like the parameters."""
    _, gw, gn = value_and_grad_log_likelihood(arch, params, data, subset)
    return ParamVector(gw, gn)


def init_weights(arch: Architecture, seed: int) -> ParamVector:
    """Glorot-uniform weights, zero biases, global noise s = 1."""
    rng = np.random.default_rng(seed)
    w = np.zeros(arch.num_weights)
    for ws, (fan_out, fan_in), _ in arch.layer_slices():
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w[ws] = rng.uniform(-limit, limit, size=fan_in * fan_out)
    return ParamVector(w, RAW_UNIT_NOISE)
