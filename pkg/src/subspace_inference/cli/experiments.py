"""End-to-end pipelines driven by an :class:`ExperimentConfig`.

One trial is: split, standardize with training statistics, pretrain with
SGD, run SWA, build the subspace, sample (ESS) or fit (VI) at a temperature,
then evaluate the Bayesian model average on the held-out rows.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..errors import NumericalError, SubspaceInferenceError
from ..inference import ChainConfig, SampleSet, VIConfig, fit_vi, run_ess, sample_vi
from ..net import Architecture, Dataset, ParamVector, init_weights
from ..posterior import SubspacePosterior
from ..predict import bma_predict, evaluate
from ..subspace import (
    CurveConfig,
    CurveEndpoints,
    Subspace,
    curve_subspace,
    find_curve,
    pca_subspace,
    random_subspace,
    with_noise_coordinate,
)
from ..train import SwaResult, TrainConfig, run_swa, train_sgd
from .config import ExperimentConfig
from .datasets import (
    SYNTH_INTERVALS,
    in_data_region,
    in_gap,
    load_csv_dataset,
    split_indices,
    standardize,
    synth_regression,
)

log = logging.getLogger(__name__)

METRIC_NAMES = ("nll_norm", "nll_unnorm", "rmse", "coverage95")
TRIAL_ERRORS = (SubspaceInferenceError, ArithmeticError, ValueError, np.linalg.LinAlgError)


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    """The configured dataset in original units."""
    d = cfg.data
    if d.source == "synthetic":
        return synth_regression(d.n_points, d.noise_std, d.teacher_seed)
    return load_csv_dataset(d.source, d.target_column)


def build_architecture(cfg: ExperimentConfig, input_dim: int) -> Architecture:
    m = cfg.model
    return Architecture(input_dim, m.hidden_sizes, m.head, activation=m.activation, augment_square_input=m.augment_square_input)


def _batch_size(section, n: int) -> int:
    if section.batch_size > 0:
        return min(section.batch_size, n)
    return max(1, min(n, int(round(section.batch_fraction * n))))


def optimizer_config(section, n: int, seed: int) -> TrainConfig:
    extra = {}
    if hasattr(section, "capture_frequency"):
        extra = {"capture_frequency": section.capture_frequency, "max_deviation_cols": section.max_deviation_cols}
    return TrainConfig(
        learning_rate=section.learning_rate,
        momentum=section.momentum,
        weight_decay=section.weight_decay,
        num_steps=section.num_steps,
        batch_size=_batch_size(section, n),
        seed=seed,
        **extra,
    )


class Seeds:
    """Independent integer seeds drawn from ``(master, *key)``."""

    def __init__(self, master: int, *key: int):
        self.rng = np.random.default_rng([master, *key])

    def split_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.next())

    def next(self) -> int:
        return int(self.rng.integers(0, 2**31 - 1))


@dataclass
class FittedModel:
    arch: Architecture
    pretrained: ParamVector
    swa: SwaResult


def fit_model(cfg: ExperimentConfig, train: Dataset, seeds: Seeds) -> FittedModel:
    """Pretrain from a fresh initialization and run the SWA phase."""
    arch = build_architecture(cfg, train.num_features)
    n = len(train)
    p0 = init_weights(arch, seeds.next())
    pretrained = train_sgd(arch, p0, train, optimizer_config(cfg.train, n, seeds.next()))
    if not pretrained.is_finite():
        raise NumericalError("pretraining diverged")
    swa = run_swa(arch, pretrained, train, optimizer_config(cfg.swa, n, seeds.next()))
    if not swa.w_swa.is_finite():
        raise NumericalError("SWA diverged")
    return FittedModel(arch, pretrained, swa)


def build_subspace(cfg: ExperimentConfig, model: FittedModel, train: Dataset, seeds: Seeds) -> Subspace:
    s = cfg.subspace
    w_swa = model.swa.w_swa
    if s.kind == "pca":
        sub = pca_subspace(model.swa.buffer, w_swa, s.rank, s.pca_scale)
    elif s.kind == "random":
        sub = random_subspace(model.arch.num_weights, s.rank, w_swa, seeds.next())
    else:
        other = fit_model(cfg, train, seeds)
        c = cfg.curve
        curve_cfg = CurveConfig(c.learning_rate, c.momentum, c.weight_decay, c.num_steps, min(c.batch_size, len(train)), seeds.next())
        w_half = find_curve(model.arch, w_swa, other.swa.w_swa, train, curve_cfg)
        sub = curve_subspace(CurveEndpoints(w_swa, other.swa.w_swa, w_half))
    return with_noise_coordinate(sub) if s.include_noise else sub


def infer(cfg: ExperimentConfig, post: SubspacePosterior, seed: int) -> SampleSet:
    i = cfg.inference
    if i.method == "ess":
        chain = ChainConfig(num_samples=i.num_samples, burn_in=i.burn_in, thinning=i.thinning, seed=seed)
        return run_ess(post, None, chain)
    q = fit_vi(post, VIConfig(steps=i.vi_steps, learning_rate=i.vi_learning_rate, mc_samples=i.vi_mc_samples, seed=seed))
    samples = sample_vi(q, i.num_samples, seed + 1, target=post)
    meta = {**samples.meta, "temperature": float(post.temperature), "prior_std": float(post.prior_std), "final_elbo": q.elbo_trace[-1]}
    return SampleSet(samples.samples, samples.log_posteriors, "vi", meta)


def posterior_for(cfg: ExperimentConfig, sub: Subspace, arch: Architecture, train: Dataset, temperature: float):
    return SubspacePosterior(sub, arch, train, float(temperature), cfg.inference.prior_std)


def score(post: SubspacePosterior, samples: SampleSet, test: Dataset) -> dict:
    summary = bma_predict(post, samples, test.inputs)
    m = evaluate(summary, test.targets, (test.target_mean, test.target_std))
    return {"nll_norm": m.nll, "nll_unnorm": m.nll_unnormalized, "rmse": m.rmse, "coverage95": m.coverage95}


def select_temperature(cfg: ExperimentConfig, raw_train: Dataset, seeds: Seeds):
    """Grid temperature with the best mean held-out NLL over random validation splits.

    Each split refits the model and subspace on its own training part and
    evaluates every grid value; NLLs are compared in original target units.
    Returns ``(temperature, [(T, mean_nll_unnorm), ...])``.
    """
    i = cfg.inference
    grid = tuple(float(t) for t in i.temperature_grid)
    totals = np.zeros(len(grid))
    for _ in range(i.validation_splits):
        fit_idx, val_idx = split_indices(len(raw_train), i.validation_fraction, seeds.split_rng())
        fit, val = standardize(raw_train.subset(fit_idx), raw_train.subset(val_idx))
        model = fit_model(cfg, fit, seeds)
        sub = build_subspace(cfg, model, fit, seeds)
        chain_seed = seeds.next()
        for k, t in enumerate(grid):
            post = posterior_for(cfg, sub, model.arch, fit, t)
            totals[k] += score(post, infer(cfg, post, chain_seed), val)["nll_unnorm"]
    means = totals / i.validation_splits
    best = int(np.argmin(means))
    return grid[best], list(zip(grid, means.tolist()))


@dataclass
class TrialResult:
    trial: int
    train_index: List[int]
    test_index: List[int]
    metrics: Optional[dict] = None
    temperature: Optional[float] = None
    validation: list = field(default_factory=list)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.metrics is not None


def run_trial(cfg: ExperimentConfig, raw: Dataset, trial: int) -> TrialResult:
    """One self-contained trial; stage failures are recorded, not raised."""
    seeds = Seeds(cfg.protocol.seed, trial)
    train_idx, test_idx = split_indices(len(raw), cfg.data.test_fraction, seeds.split_rng())
    result = TrialResult(trial, train_idx.tolist(), test_idx.tolist())
    try:
        raw_train = raw.subset(train_idx)
        t = cfg.inference.temperature
        if t == "validate":
            t, result.validation = select_temperature(cfg, raw_train, Seeds(cfg.protocol.seed, trial, 1))
        result.temperature = float(t)
        train, test = standardize(raw_train, raw.subset(test_idx))
        model = fit_model(cfg, train, seeds)
        sub = build_subspace(cfg, model, train, seeds)
        post = posterior_for(cfg, sub, model.arch, train, t)
        result.metrics = score(post, infer(cfg, post, seeds.next()), test)
    except TRIAL_ERRORS as err:
        log.warning("trial %d failed: %s", trial, err)
        result.error = f"{type(err).__name__}: {err}"
    return result


def _trial_job(args):
    return run_trial(*args)


@dataclass
class ProtocolReport:
    trials: List[TrialResult]
    aggregate: dict

    @property
    def n_completed(self) -> int:
        return sum(t.ok for t in self.trials)

    def to_dict(self) -> dict:
        return {
            "n_trials": len(self.trials),
            "n_completed": self.n_completed,
            "aggregate": {k: {"mean": m, "std": s} for k, (m, s) in self.aggregate.items()},
            "trials": [vars(t) for t in self.trials],
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", *METRIC_NAMES, "temperature", "status"])
            for t in self.trials:
                values = [t.metrics[k] for k in METRIC_NAMES] if t.ok else [""] * len(METRIC_NAMES)
                w.writerow([t.trial, *values, "" if t.temperature is None else t.temperature, "ok" if t.ok else t.error])


def aggregate_metrics(trials) -> dict:
    """Mean and sample standard deviation (0 for one trial) over completed trials."""
    done = [t.metrics for t in trials if t.ok]
    out = {}
    for k in METRIC_NAMES:
        vals = np.array([m[k] for m in done])
        if vals.size == 0:
            out[k] = (math.nan, math.nan)
        else:
            out[k] = (float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else 0.0)
    return out


def run_uci_protocol(cfg: ExperimentConfig, raw: Optional[Dataset] = None, jobs: Optional[int] = None) -> ProtocolReport:
    """Repeated random-split evaluation; trials run in up to ``jobs`` worker processes."""
    cfg.validate()
    raw = load_dataset(cfg) if raw is None else raw
    jobs = cfg.protocol.jobs if jobs is None else jobs
    work = [(cfg, raw, k) for k in range(cfg.protocol.trials)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            trials = list(pool.map(_trial_job, work))
    else:
        trials = [_trial_job(w) for w in work]
    trials.sort(key=lambda t: t.trial)
    return ProtocolReport(trials, aggregate_metrics(trials))


@dataclass
class SweepRow:
    temperature: float
    nll_norm: float
    nll_unnorm: float
    rmse: float
    coverage95: float


def temperature_sweep(cfg: ExperimentConfig, grid, raw: Optional[Dataset] = None, trial: int = 0) -> List[SweepRow]:
    """Test metrics at each temperature with one fitted subspace reused across the grid."""
    grid = [float(t) for t in grid]
    if not grid or any(not t > 0 for t in grid):
        raise ValueError("temperature grid must be nonempty and positive")
    raw = load_dataset(cfg) if raw is None else raw
    seeds = Seeds(cfg.protocol.seed, trial)
    train_idx, test_idx = split_indices(len(raw), cfg.data.test_fraction, seeds.split_rng())
    train, test = standardize(raw.subset(train_idx), raw.subset(test_idx))
    model = fit_model(cfg, train, seeds)
    sub = build_subspace(cfg, model, train, seeds)
    chain_seed = seeds.next()
    rows = []
    for t in grid:
        post = posterior_for(cfg, sub, model.arch, train, t)
        m = score(post, infer(cfg, post, chain_seed), test)
        rows.append(SweepRow(t, m["nll_norm"], m["nll_unnorm"], m["rmse"], m["coverage95"]))
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["temperature", *METRIC_NAMES])
        for r in rows:
            w.writerow([r.temperature, r.nll_norm, r.nll_unnorm, r.rmse, r.coverage95])


@dataclass
class PredictiveCurve:
    x: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    trajectories: np.ndarray

    @property
    def header(self):
        return ["x", "mean", "std", *[f"sample_{j + 1}" for j in range(self.trajectories.shape[0])]]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            for i in range(self.x.shape[0]):
                w.writerow([self.x[i], self.mean[i], self.std[i], *self.trajectories[:, i]])


def emit_predictive_curve(post: SubspacePosterior, samples: SampleSet, x_grid, path=None) -> PredictiveCurve:
    """BMA mean, std and per-sample mean functions on a sorted 1-D grid, in original units."""
    x = np.asarray(x_grid, dtype=np.float64).ravel()
    if np.any(np.diff(x) < 0):
        raise ValueError("x_grid must be sorted")
    data = post.data
    inputs = ((x[:, None] - data.input_mean) / data.input_std)
    summary = bma_predict(post, samples, inputs)
    scale, shift = data.target_std, data.target_mean
    curve = PredictiveCurve(
        x,
        summary.mean * scale + shift,
        summary.std * scale,
        summary.component_means * scale + shift,
    )
    if path is not None:
        curve.write_csv(path)
    return curve


def prepare_split(cfg: ExperimentConfig, raw: Optional[Dataset] = None, trial: int = 0):
    """Standardized ``(train, test)`` for one trial's split, as used by the single-step commands."""
    raw = load_dataset(cfg) if raw is None else raw
    seeds = Seeds(cfg.protocol.seed, trial)
    train_idx, test_idx = split_indices(len(raw), cfg.data.test_fraction, seeds.split_rng())
    return standardize(raw.subset(train_idx), raw.subset(test_idx))


def gap_to_data_ratio(curve: PredictiveCurve) -> float:
    """Mean predictive std inside the gaps over the mean inside the data intervals."""
    gap = in_gap(curve.x)
    data = in_data_region(curve.x)
    return float(curve.std[gap].mean() / curve.std[data].mean())


@dataclass
class SyntheticRun:
    curves: dict
    ratios: dict
    temperature: float


def run_synthetic(cfg: ExperimentConfig, kinds=("pca", "random"), grid_points: int = 289) -> SyntheticRun:
    """Fit once on the whole synthetic set, then sample each subspace kind and emit curves.

    Every kind shares the same SWA solution and chain seed, so the only
    difference between curves is the subspace.
    """
    cfg.validate()
    if cfg.data.source != "synthetic":
        raise ValueError("run_synthetic needs data.source = \"synthetic\"")
    t = cfg.inference.temperature
    if t == "validate":
        raise ValueError("run_synthetic needs a numeric temperature")
    (train,) = standardize(load_dataset(cfg))
    seeds = Seeds(cfg.protocol.seed, 0)
    model = fit_model(cfg, train, seeds)
    lo, hi = SYNTH_INTERVALS[0][0], SYNTH_INTERVALS[-1][1]
    grid = np.linspace(lo, hi, grid_points)
    chain_seed = seeds.next()
    curves, ratios = {}, {}
    for kind in kinds:
        kind_cfg = cfg.replace(subspace={"kind": kind})
        sub = build_subspace(kind_cfg, model, train, seeds)
        post = posterior_for(kind_cfg, sub, model.arch, train, t)
        curves[kind] = emit_predictive_curve(post, infer(kind_cfg, post, chain_seed), grid)
        ratios[kind] = gap_to_data_ratio(curves[kind])
    return SyntheticRun(curves, ratios, float(t))
