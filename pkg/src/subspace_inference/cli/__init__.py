"""Experiment harness: data, configuration, serialization and the command line."""

from .config import ExperimentConfig, load_config
from .datasets import load_csv_dataset, save_csv_dataset, standardize, synth_regression
from .experiments import emit_predictive_curve, run_synthetic, run_uci_protocol, temperature_sweep
from .serialize import load_checkpoint, load_samples, load_subspace, save_checkpoint, save_samples, save_subspace

__all__ = [
    "ExperimentConfig",
    "emit_predictive_curve",
    "load_checkpoint",
    "load_config",
    "load_csv_dataset",
    "load_samples",
    "load_subspace",
    "run_synthetic",
    "run_uci_protocol",
    "save_checkpoint",
    "save_csv_dataset",
    "save_samples",
    "save_subspace",
    "standardize",
    "synth_regression",
    "temperature_sweep",
]
