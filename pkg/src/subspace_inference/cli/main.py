"""Command-line entry point.

Every subcommand reads the same TOML config (``--config``, ``--set``) and
works on the trial-0 split of the configured dataset unless it says
otherwise. Exit codes: 0 success, 1 usage or config error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from ..errors import ConfigError, DataError, DimensionError, NumericalError
from ..inference import ChainConfig, SampleSet, VIConfig, fit_vi, run_ess, sample_vi
from ..net import init_weights
from ..predict import bma_predict, evaluate
from ..spectrum import SpectrumReport, hvp, lanczos, trajectory_spectrum
from ..subspace import (
    CurveConfig,
    CurveEndpoints,
    DegenerateSubspaceError,
    curve_subspace,
    find_curve,
    pca_subspace,
    random_subspace,
    with_noise_coordinate,
)
from ..train import run_swa, train_sgd
from . import experiments as ex
from .config import load_config
from .serialize import load_checkpoint, load_samples, load_subspace, save_checkpoint, save_samples, save_subspace

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("subspace_inference")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj):
    print(json.dumps(obj, indent=2, default=float))


def _config(args):
    cfg = load_config(args.config, args.set or ())
    source = cfg.data.source
    if args.config and source != "synthetic" and not os.path.isabs(source) and not os.path.exists(source):
        candidate = os.path.join(os.path.dirname(os.path.abspath(args.config)), source)
        if os.path.exists(candidate):
            cfg = cfg.replace(data={"source": candidate})
    return cfg.validate()


def _numeric_temperature(cfg, override):
    if override is not None:
        if not override > 0:
            raise ConfigError("--temperature must be > 0")
        return override
    t = cfg.inference.temperature
    if t != "validate":
        return float(t)
    raw = ex.load_dataset(cfg)
    seeds = ex.Seeds(cfg.protocol.seed, 0)
    train_idx, _ = ex.split_indices(len(raw), cfg.data.test_fraction, seeds.split_rng())
    best, table = ex.select_temperature(cfg, raw.subset(train_idx), ex.Seeds(cfg.protocol.seed, 0, 1))
    log.info("validation temperatures: %s", table)
    return best


def cmd_train(args):
    cfg = _config(args)
    train, _ = ex.prepare_split(cfg)
    arch = ex.build_architecture(cfg, train.num_features)
    seeds = ex.Seeds(cfg.protocol.seed, 0)
    init_seed, train_seed = seeds.next(), seeds.next()
    params = train_sgd(arch, init_weights(arch, init_seed), train, ex.optimizer_config(cfg.train, len(train), train_seed))
    if not params.is_finite():
        raise NumericalError("training diverged")
    save_checkpoint(args.out, arch, params, {"seed": train_seed, "init_seed": init_seed, "steps": cfg.train.num_steps, "stage": "sgd"})
    _emit({"checkpoint": args.out, "num_weights": arch.num_weights})


def cmd_swa(args):
    cfg = _config(args)
    train, _ = ex.prepare_split(cfg)
    arch, params, meta, _ = load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else ex.Seeds(cfg.protocol.seed, 0, 2).next()
    result = run_swa(arch, params, train, ex.optimizer_config(cfg.swa, len(train), seed))
    if not result.w_swa.is_finite():
        raise NumericalError("SWA diverged")
    save_checkpoint(
        args.out, arch, result.w_swa, {"seed": seed, "steps": cfg.swa.num_steps, "stage": "swa", "parent": meta}, result.buffer
    )
    _emit({"checkpoint": args.out, "captured": result.buffer.n_captured, "buffered": len(result.buffer)})


def cmd_curve_find(args):
    cfg = _config(args)
    train, _ = ex.prepare_split(cfg)
    arch, w0, _, _ = load_checkpoint(args.checkpoint)
    arch1, w1, _, _ = load_checkpoint(args.other)
    if arch1 != arch:
        raise DataError("endpoint checkpoints have different architectures")
    c = cfg.curve
    curve_cfg = CurveConfig(c.learning_rate, c.momentum, c.weight_decay, c.num_steps, min(c.batch_size, len(train)), cfg.protocol.seed)
    half = find_curve(arch, w0, w1, train, curve_cfg)
    save_checkpoint(args.out, arch, half, {"stage": "curve_midpoint", "steps": c.num_steps, "seed": cfg.protocol.seed})
    _emit({"checkpoint": args.out})


def cmd_subspace(args):
    cfg = _config(args)
    arch, w_swa, _, buffer = load_checkpoint(args.checkpoint)
    s = cfg.subspace
    if s.kind == "pca":
        if buffer is None:
            raise DataError(f"{args.checkpoint} has no deviation buffer; run `swa` first")
        sub = pca_subspace(buffer, w_swa, s.rank, s.pca_scale)
    elif s.kind == "random":
        sub = random_subspace(arch.num_weights, s.rank, w_swa, cfg.protocol.seed)
    else:
        if args.other is None or args.midpoint is None:
            raise ConfigError("the curve subspace needs --other and --midpoint checkpoints")
        _, w1, _, _ = load_checkpoint(args.other)
        _, half, _, _ = load_checkpoint(args.midpoint)
        sub = curve_subspace(CurveEndpoints(w_swa, w1, half))
    if s.include_noise:
        sub = with_noise_coordinate(sub)
    save_subspace(args.out, sub, arch, {"kind": sub.kind, "rank": sub.dim})
    out = {"subspace": args.out, "kind": sub.kind, "dim": sub.dim}
    if sub.singular_values is not None:
        out["singular_values"] = sub.singular_values.tolist()
    _emit(out)


def _posterior(cfg, args, train):
    sub, arch = load_subspace(args.subspace)
    if arch is None:
        raise DataError(f"{args.subspace} carries no architecture")
    if arch.input_dim != train.num_features:
        raise DimensionError("input features", arch.input_dim, train.num_features)
    t = _numeric_temperature(cfg, getattr(args, "temperature", None))
    return ex.posterior_for(cfg, sub, arch, train, t)


def cmd_sample_ess(args):
    cfg = _config(args)
    train, _ = ex.prepare_split(cfg)
    post = _posterior(cfg, args, train)
    i = cfg.inference
    chain = ChainConfig(num_samples=i.num_samples, burn_in=i.burn_in, thinning=i.thinning, seed=cfg.protocol.seed)
    samples = run_ess(post, None, chain)
    save_samples(args.out, samples)
    _emit({"samples": args.out, **samples.meta})


def cmd_fit_vi(args):
    cfg = _config(args)
    train, _ = ex.prepare_split(cfg)
    post = _posterior(cfg, args, train)
    i = cfg.inference
    q = fit_vi(post, VIConfig(steps=i.vi_steps, learning_rate=i.vi_learning_rate, mc_samples=i.vi_mc_samples, seed=cfg.protocol.seed))
    drawn = sample_vi(q, i.num_samples, cfg.protocol.seed + 1, target=post)
    samples = SampleSet(
        drawn.samples,
        drawn.log_posteriors,
        "vi",
        {
            **drawn.meta,
            "temperature": post.temperature,
            "prior_std": post.prior_std,
            "vi_mean": q.mean.tolist(),
            "vi_std": q.std.tolist(),
            "final_elbo": q.elbo_trace[-1],
        },
    )
    save_samples(args.out, samples)
    _emit({"samples": args.out, "final_elbo": q.elbo_trace[-1], "std": q.std.tolist()})


def _parse_grid(text):
    lo, hi, n = text.split(":")
    return np.linspace(float(lo), float(hi), int(n))


def cmd_predict(args):
    cfg = _config(args)
    train, test = ex.prepare_split(cfg)
    post = _posterior(cfg, args, train)
    samples = load_samples(args.samples)
    if samples.samples.shape[1] != post.dim:
        raise DimensionError("sample dimension", post.dim, samples.samples.shape[1])
    if args.grid:
        if train.num_features != 1:
            raise ConfigError("--grid needs a dataset with one input feature")
        ex.emit_predictive_curve(post, samples, _parse_grid(args.grid), args.out)
    else:
        summary = bma_predict(post, samples, test.inputs)
        mean = summary.mean * test.target_std + test.target_mean
        std = summary.std * test.target_std
        y = test.targets * test.target_std + test.target_mean
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "target", "mean", "std"])
            for k in range(len(test)):
                w.writerow([k, y[k], mean[k], std[k]])
    _emit({"predictions": args.out})


def cmd_eval(args):
    cfg = _config(args)
    train, test = ex.prepare_split(cfg)
    post = _posterior(cfg, args, train)
    samples = load_samples(args.samples)
    m = evaluate(bma_predict(post, samples, test.inputs), test.targets, (test.target_mean, test.target_std), args.interval)
    # metrics that do not apply to the head are NaN; leave them out of the JSON
    _emit({k: v for k, v in m.as_dict().items() if not (isinstance(v, float) and math.isnan(v))})


def cmd_uci(args):
    cfg = _config(args)
    report = ex.run_uci_protocol(cfg, jobs=args.jobs)
    if args.out:
        report.write_csv(args.out)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump({"config": cfg.to_dict(), **report.to_dict()}, fh, default=float)
    _emit({"n_trials": len(report.trials), "n_completed": report.n_completed, "aggregate": report.to_dict()["aggregate"]})
    if report.n_completed == 0:
        raise NumericalError("no trial completed")


def cmd_synth(args):
    cfg = _config(args)
    if cfg.data.source != "synthetic":
        raise ConfigError("synth needs data.source = \"synthetic\"")
    run = ex.run_synthetic(cfg, kinds=tuple(args.kinds.split(",")), grid_points=args.grid_points)
    os.makedirs(args.out_dir, exist_ok=True)
    for kind, curve in run.curves.items():
        curve.write_csv(os.path.join(args.out_dir, f"predictive_{kind}.csv"))
    _emit({"gap_to_data_std_ratio": run.ratios, "temperature": run.temperature, "noise_std": cfg.data.noise_std, "out_dir": args.out_dir})


def cmd_spectrum(args):
    cfg = _config(args)
    train, _ = ex.prepare_split(cfg)
    arch, params, _, buffer = load_checkpoint(args.checkpoint)
    fractions = trajectory_spectrum(buffer) if buffer is not None and len(buffer) else np.zeros(0)
    eig = np.zeros(0)
    if args.lanczos_iters > 0:
        iters = min(args.lanczos_iters, arch.num_weights)
        eig = lanczos(lambda v: hvp(arch, params, train, v, args.eps), arch.num_weights, iters, cfg.protocol.seed)
    report = SpectrumReport(eig, fractions)
    report.write_csv(args.out)
    _emit({"spectrum": args.out, "hessian_top": eig[:5].tolist(), "explained_variance_top": fractions[:5].tolist()})


def cmd_temp_sweep(args):
    cfg = _config(args)
    grid = [float(t) for t in args.grid.split(",")] if args.grid else list(cfg.inference.temperature_grid)
    rows = ex.temperature_sweep(cfg, grid)
    ex.write_sweep_csv(rows, args.out)
    _emit([vars(r) for r in rows])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="subspace-inference", description="Bayesian inference in low-dimensional weight subspaces")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("train", cmd_train, "pretrain with SGD and save a checkpoint")
    p.add_argument("--out", required=True)

    p = add("swa", cmd_swa, "run the SWA phase from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("curve-find", cmd_curve_find, "fit a Bezier curve between two checkpoints and save its midpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--other", required=True)
    p.add_argument("--out", required=True)

    p = add("subspace", cmd_subspace, "build a subspace from an SWA checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--other", help="second endpoint (curve subspace)")
    p.add_argument("--midpoint", help="curve midpoint from curve-find (curve subspace)")
    p.add_argument("--out", required=True)

    for name, func, text in (("sample-ess", cmd_sample_ess, "elliptical slice sampling in a subspace"),
                             ("fit-vi", cmd_fit_vi, "factorized Gaussian VI in a subspace")):
        p = add(name, func, text)
        p.add_argument("--subspace", required=True)
        p.add_argument("--temperature", type=float)
        p.add_argument("--out", required=True)

    for name, func, text in (("predict", cmd_predict, "write BMA predictions"),
                             ("eval", cmd_eval, "print BMA test metrics")):
        p = add(name, func, text)
        p.add_argument("--subspace", required=True)
        p.add_argument("--samples", required=True)
        p.add_argument("--temperature", type=float)
        if name == "predict":
            p.add_argument("--out", required=True)
            p.add_argument("--grid", metavar="LO:HI:N", help="1-D input grid for a predictive curve")
        else:
            p.add_argument("--interval", choices=("gaussian", "mixture"), default="gaussian")

    p = add("uci", cmd_uci, "repeated-split protocol with per-trial metrics")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="per-trial metrics CSV")
    p.add_argument("--report", help="JSON report including split indices")

    p = add("synth", cmd_synth, "synthetic regression with predictive curves per subspace kind")
    p.add_argument("--kinds", default="pca,random")
    p.add_argument("--grid-points", type=int, default=289)
    p.add_argument("--out-dir", required=True)

    p = add("spectrum", cmd_spectrum, "Hessian Ritz values and trajectory explained variance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lanczos-iters", type=int, default=10)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--out", required=True)

    p = add("temp-sweep", cmd_temp_sweep, "test metrics across temperatures")
    p.add_argument("--grid", help="comma-separated temperatures (default: inference.temperature_grid)")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, DegenerateSubspaceError, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
