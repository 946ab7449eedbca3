"""Dataset ingestion, standardization, splitting and the synthetic teacher problem."""

from __future__ import annotations

import csv
import logging
import math

import numpy as np

from ..errors import DataError
from ..net import Architecture, Dataset, ParamVector, forward

log = logging.getLogger(__name__)

SYNTH_INTERVALS = ((-7.2, -4.8), (-1.2, 1.2), (4.8, 7.2))
SYNTH_GAPS = ((-4.8, -1.2), (1.2, 4.8))
SYNTH_HIDDEN = (200, 50, 50, 50)


def synth_architecture(head: str = "gaussian") -> Architecture:
    return Architecture(1, SYNTH_HIDDEN, head=head, augment_square_input=True)


def synth_teacher(seed: int) -> ParamVector:
    """Random teacher weights: N(0, 1/fan_in) weights and N(0, 1) biases."""
    arch = synth_architecture("homoscedastic")
    rng = np.random.default_rng([seed, 0])
    w = np.zeros(arch.num_weights)
    for ws, (fan_out, fan_in), bs in arch.layer_slices():
        w[ws] = rng.normal(0.0, math.sqrt(1.0 / fan_in), fan_out * fan_in)
        w[bs] = rng.normal(0.0, 1.0, fan_out)
    return ParamVector(w)


def synth_function(x, seed: int) -> np.ndarray:
    """Noise-free teacher output at scalar inputs ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    return forward(synth_architecture("homoscedastic"), synth_teacher(seed), x).mean


def synth_regression(n_points: int = 400, noise_std: float = 0.1, seed: int = 0) -> Dataset:
    """Teacher-network regression data on three disjoint intervals, in original units.

    ``x`` is uniform over the union of the intervals (they have equal
    length, so an interval is picked uniformly and then a point inside it)
    and ``y = f(x) + N(0, noise_std^2)``.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    rng = np.random.default_rng([seed, 1])
    which = rng.integers(0, len(SYNTH_INTERVALS), n_points)
    lo = np.array([SYNTH_INTERVALS[k][0] for k in which])
    hi = np.array([SYNTH_INTERVALS[k][1] for k in which])
    x = lo + (hi - lo) * rng.uniform(size=n_points)
    y = synth_function(x, seed) + noise_std * rng.standard_normal(n_points)
    return Dataset(x[:, None], y, column_names=("x", "y"))


def in_gap(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.any([(x > a) & (x < b) for a, b in SYNTH_GAPS], axis=0)


def in_data_region(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.any([(x >= a) & (x <= b) for a, b in SYNTH_INTERVALS], axis=0)


def _stats(a):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return mean, std


def standardize(train: Dataset, *others: Dataset, targets: bool = True):
    """Standardize ``train`` (and ``others``) with statistics of the raw ``train`` data.

    Inputs are expected in original units. Constant columns keep a std of 1
    with a warning. Returns a tuple of datasets in the order given.
    """
    mean, std = _stats(train.inputs)
    const = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if np.any(const):
        log.warning("constant input columns %s: std forced to 1", np.flatnonzero(const).tolist())
        std = np.where(const, 1.0, std)
    y_mean, y_std = (float(train.targets.mean()), float(train.targets.std())) if targets else (0.0, 1.0)
    if y_std <= 0:
        log.warning("constant targets: std forced to 1")
        y_std = 1.0
    out = []
    for d in (train, *others):
        out.append(
            Dataset(
                (d.inputs - mean) / std,
                (d.targets - y_mean) / y_std,
                mean,
                std,
                y_mean,
                y_std,
                d.column_names,
            )
        )
    return tuple(out)


def split_indices(n: int, test_fraction: float, rng: np.random.Generator):
    """Random ``(train_idx, test_idx)``, each sorted; test gets ``round(n * test_fraction)`` rows."""
    n_test = int(round(n * test_fraction))
    if not 1 <= n_test < n:
        raise ValueError(f"test_fraction {test_fraction} leaves an empty split for n={n}")
    perm = rng.permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _resolve_target(header, target_column):
    if target_column is None:
        return len(header) - 1
    if isinstance(target_column, int) or (isinstance(target_column, str) and target_column.lstrip("-").isdigit()):
        idx = int(target_column)
        if not -len(header) <= idx < len(header):
            raise DataError(f"target column index {idx} out of range for {len(header)} columns")
        return idx % len(header)
    if target_column not in header:
        raise DataError(f"target column {target_column!r} not found; columns are {header}")
    return header.index(target_column)


def load_csv_dataset(path, target_column=None, standardize_data: bool = False) -> Dataset:
    """Read a numeric CSV with a header row.

    ``target_column`` is a name or an index (default: last column). With
    ``standardize_data`` every input column and the target are scaled to
    mean 0 and std 1; the statistics are kept on the dataset.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty file", line=1) from None
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, found {len(row)}", line=reader.line_num)
            try:
                rows.append([float(c) for c in row])
            except ValueError as err:
                raise DataError(f"non-numeric field ({err})", line=reader.line_num) from None
    if not rows:
        raise DataError("no data rows")
    table = np.array(rows)
    t = _resolve_target(header, target_column)
    keep = [i for i in range(len(header)) if i != t]
    names = tuple(header[i] for i in keep) + (header[t],)
    data = Dataset(table[:, keep], table[:, t], column_names=names)
    if standardize_data:
        (data,) = standardize(data)
    return data


def save_csv_dataset(data: Dataset, path):
    """Write inputs then target, in the units currently stored, with full precision."""
    names = list(data.column_names) or [f"x{i}" for i in range(data.num_features)] + ["y"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for xi, yi in zip(data.inputs, data.targets):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
