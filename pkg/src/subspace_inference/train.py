"""SGD training and the constant-learning-rate SWA phase.

The SWA phase follows the moment-collection loop used to build PCA
subspaces: every ``capture_frequency`` steps the running mean is updated
with the current iterate and the deviation of that iterate from the
*updated* running mean is appended to a bounded buffer.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional

import numpy as np

from .errors import ConfigError, NumericalError
from .net import Architecture, Dataset, ParamVector, value_and_grad_log_likelihood

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    num_steps: int = 1000
    capture_frequency: int = 1
    max_deviation_cols: int = 20
    batch_size: int = 32
    seed: int = 0

    def validate(self, n_data: Optional[int] = None):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.num_steps < 0:
            raise ConfigError("num_steps must be >= 0")
        if self.capture_frequency < 1:
            raise ConfigError("capture_frequency must be >= 1")
        if self.max_deviation_cols < 1:
            raise ConfigError("max_deviation_cols must be >= 1")
        if self.batch_size < 1 or (n_data is not None and self.batch_size > n_data):
            raise ConfigError(f"batch_size must lie in [1, {n_data}]")


@dataclass
class DeviationBuffer:
    """The last ``max_cols`` deviation vectors, oldest first."""

    max_cols: int
    columns: deque = field(default_factory=deque)
    n_captured: int = 0

    def append(self, deviation: np.ndarray):
        if len(self.columns) == self.max_cols:
            self.columns.popleft()
        self.columns.append(np.array(deviation, dtype=np.float64))
        self.n_captured += 1

    def __len__(self):
        return len(self.columns)

    def matrix(self) -> np.ndarray:
        """Deviations as rows of an ``(M, d)`` array."""
        if not self.columns:
            return np.zeros((0, 0))
        return np.stack(list(self.columns))


@dataclass
class SwaResult:
    w_swa: ParamVector
    buffer: DeviationBuffer
    pretrained_start: ParamVector
    trace: List[dict] = field(default_factory=list)


@dataclass(frozen=True)
class TraceRecord:
    step: int
    loss: float
    learning_rate: float

    def as_dict(self):
        return {"step": self.step, "loss": self.loss, "learning_rate": self.learning_rate}


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless stream of index batches: sequential passes over a fresh shuffle per epoch."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]


def loss_and_grad(arch: Architecture, flat: np.ndarray, data: Dataset, batch, weight_decay: float):
    """Negative mean log-likelihood over ``batch`` plus ``weight_decay * |w|^2 / 2``.

    ``flat`` is a :meth:`ParamVector.to_array` vector; the raw noise entry is
    not decayed.
    """
    params = ParamVector.from_array(flat)
    ll, gw, gn = value_and_grad_log_likelihood(arch, params, data, batch)
    n = len(batch)
    w = flat[:-1]
    loss = -ll / n + 0.5 * weight_decay * float(w @ w)
    grad = np.empty_like(flat)
    grad[:-1] = -gw / n + weight_decay * w
    grad[-1] = -gn / n
    return loss, grad


class _Sgd:
    """Heavy-ball SGD over a flat parameter array."""

    def __init__(self, arch, flat, data, config: TrainConfig):
        self.arch = arch
        self.flat = np.array(flat, dtype=np.float64)
        self.data = data
        self.config = config
        self.velocity = np.zeros_like(self.flat)
        self.batches = minibatches(len(data), config.batch_size, np.random.default_rng(config.seed))

    def step(self, i: int, learning_rate: float) -> float:
        batch = next(self.batches)
        try:
            loss, grad = loss_and_grad(self.arch, self.flat, self.data, batch, self.config.weight_decay)
        except NumericalError as err:
            raise NumericalError("non-finite loss during training", index=err.index, step=i) from err
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericalError("non-finite loss during training", step=i)
        self.velocity = self.config.momentum * self.velocity + grad
        self.flat = self.flat - learning_rate * self.velocity
        return loss


def train_sgd(
    arch: Architecture,
    params0: ParamVector,
    data: Dataset,
    config: TrainConfig,
    trace: Optional[Callable[[TraceRecord], None]] = None,
    schedule: Optional[Callable[[int], float]] = None,
) -> ParamVector:
    """Run ``config.num_steps`` mini-batch SGD steps and return the final iterate.

    ``schedule`` maps the step index to a learning rate; the default is the
    constant ``config.learning_rate``.
    """
    config.validate(len(data))
    if config.num_steps == 0:
        return params0
    opt = _Sgd(arch, params0.to_array(), data, config)
    for i in range(1, config.num_steps + 1):
        lr = config.learning_rate if schedule is None else schedule(i)
        loss = opt.step(i, lr)
        if trace is not None:
            trace(TraceRecord(i, loss, lr))
    return ParamVector.from_array(opt.flat)


def run_swa(
    arch: Architecture,
    pretrained: ParamVector,
    data: Dataset,
    config: TrainConfig,
    trace: Optional[Callable[[TraceRecord], None]] = None,
    iterate_log: Optional[list] = None,
) -> SwaResult:
    """Constant-learning-rate SGD from ``pretrained`` collecting SWA moments.

    The running mean starts at the pretrained weights, which count as the
    first averaged model. At each capture ``n`` models have already been
    averaged, the mean becomes ``(n * mean + w_i) / (n + 1)`` and
    ``w_i - mean`` (network weights only) is appended to the buffer.
    Captured iterates are appended to ``iterate_log`` when it is given.
    """
    config.validate(len(data))
    opt = _Sgd(arch, pretrained.to_array(), data, config)
    mean = pretrained.to_array()
    buffer = DeviationBuffer(config.max_deviation_cols)
    records = []
    for i in range(1, config.num_steps + 1):
        loss = opt.step(i, config.learning_rate)
        record = TraceRecord(i, loss, config.learning_rate)
        records.append(record.as_dict())
        if trace is not None:
            trace(record)
        if i % config.capture_frequency == 0:
            n = i // config.capture_frequency
            w_i = opt.flat
            mean = (n * mean + w_i) / (n + 1)
            buffer.append(w_i[:-1] - mean[:-1])
            if iterate_log is not None:
                iterate_log.append(w_i.copy())
    log.debug("SWA finished: %d captures, %d buffered", buffer.n_captured, len(buffer))
    return SwaResult(ParamVector.from_array(mean), buffer, pretrained, records)
