"""Experiment configuration: TOML sections, ``--set`` overrides and validation."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from typing import Any, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError

SUBSPACE_KINDS = ("pca", "random", "curve")
INFERENCE_METHODS = ("ess", "vi")
PCA_SCALES = ("sqrt_m_minus_1", "singular_values", "unit")


@dataclass(frozen=True)
class DataSection:
    # "synthetic" or a CSV path
    source: str = "synthetic"
    target_column: Any = None
    test_fraction: float = 0.1
    noise_std: float = 0.1
    n_points: int = 400
    teacher_seed: int = 0


@dataclass(frozen=True)
class ModelSection:
    hidden_sizes: Tuple[int, ...] = (50,)
    head: str = "gaussian"
    activation: str = "relu"
    augment_square_input: bool = False


@dataclass(frozen=True)
class OptimSection:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    num_steps: int = 1000
    # 0 means round(batch_fraction * N)
    batch_size: int = 0
    batch_fraction: float = 0.1


@dataclass(frozen=True)
class SwaSection(OptimSection):
    learning_rate: float = 1e-2
    capture_frequency: int = 50
    max_deviation_cols: int = 20


@dataclass(frozen=True)
class SubspaceSection:
    kind: str = "pca"
    rank: int = 5
    pca_scale: str = "sqrt_m_minus_1"
    include_noise: bool = False


@dataclass(frozen=True)
class CurveSection:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 0.0
    num_steps: int = 2000
    batch_size: int = 32


@dataclass(frozen=True)
class InferenceSection:
    method: str = "ess"
    # a positive number, or "validate" to grid-search on held-out splits
    temperature: Any = None
    temperature_grid: Tuple[float, ...] = (1.0, 3.0, 10.0, 30.0, 100.0)
    validation_splits: int = 3
    validation_fraction: float = 0.2
    prior_std: float = 1.0
    num_samples: int = 30
    burn_in: int = 500
    thinning: int = 1
    vi_steps: int = 5000
    vi_learning_rate: float = 0.01
    vi_mc_samples: int = 4


@dataclass(frozen=True)
class ProtocolSection:
    trials: int = 20
    seed: int = 0
    jobs: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: OptimSection = field(default_factory=OptimSection)
    swa: SwaSection = field(default_factory=SwaSection)
    subspace: SubspaceSection = field(default_factory=SubspaceSection)
    curve: CurveSection = field(default_factory=CurveSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with per-section field updates, e.g. ``replace(swa={"num_steps": 10})``."""
        updates = {}
        for name, values in sections.items():
            current = getattr(self, name)
            updates[name] = _build(type(current), {**dataclasses.asdict(current), **values}, name)
        return dataclasses.replace(self, **updates)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "ExperimentConfig":
        _validate(self)
        return self


def _coerce(value, default, where):
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        item = default[0] if default else 0
        return tuple(_coerce(v, item, where) for v in value)
    return value


def _build(cls, values: dict, section: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name in values:
            default = f.default if f.default is not dataclasses.MISSING else None
            kwargs[name] = _coerce(values[name], default, f"{section}.{name}")
    return cls(**kwargs)


def config_from_dict(raw: dict) -> ExperimentConfig:
    sections = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - set(sections)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    built = {}
    for name, f in sections.items():
        values = raw.get(name, {})
        if not isinstance(values, dict):
            raise ConfigError(f"[{name}] must be a table")
        built[name] = _build(f.default_factory, values, name)
    return ExperimentConfig(**built)


def parse_override(text: str):
    """Split ``section.key=value``; the value is parsed as a TOML value, else kept as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key {key!r} must be section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return parts[0], parts[1], value


def load_config(path: Optional[str] = None, overrides=()) -> ExperimentConfig:
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
    for item in overrides:
        section, key, value = parse_override(item)
        raw.setdefault(section, {})
        if not isinstance(raw[section], dict):
            raise ConfigError(f"[{section}] must be a table")
        raw[section][key] = value
    return config_from_dict(raw)


def _check(cond, message):
    if not cond:
        raise ConfigError(message)


def _validate(c: ExperimentConfig):
    d = c.data
    _check(0 < d.test_fraction < 1, "data.test_fraction must lie in (0, 1)")
    _check(d.noise_std >= 0, "data.noise_std must be >= 0")
    _check(d.n_points >= 2, "data.n_points must be >= 2")
    m = c.model
    _check(all(h >= 1 for h in m.hidden_sizes), "model.hidden_sizes must be positive")
    _check(m.head in ("gaussian", "homoscedastic"), "model.head must be 'gaussian' or 'homoscedastic'")
    _check(m.activation in ("relu", "tanh"), "model.activation must be 'relu' or 'tanh'")
    for name in ("train", "swa", "curve"):
        s = getattr(c, name)
        _check(s.learning_rate >= 0, f"{name}.learning_rate must be >= 0")
        _check(0 <= s.momentum < 1, f"{name}.momentum must lie in [0, 1)")
        _check(s.weight_decay >= 0, f"{name}.weight_decay must be >= 0")
        _check(s.num_steps >= 0, f"{name}.num_steps must be >= 0")
        _check(s.batch_size >= 0, f"{name}.batch_size must be >= 0")
    for name in ("train", "swa"):
        s = getattr(c, name)
        _check(s.batch_size > 0 or 0 < s.batch_fraction <= 1, f"{name}.batch_fraction must lie in (0, 1]")
    _check(c.swa.num_steps >= 1, "swa.num_steps must be >= 1")
    _check(c.swa.capture_frequency >= 1, "swa.capture_frequency must be >= 1")
    _check(c.swa.max_deviation_cols >= 1, "swa.max_deviation_cols must be >= 1")
    s = c.subspace
    _check(s.kind in SUBSPACE_KINDS, f"subspace.kind must be one of {SUBSPACE_KINDS}")
    _check(s.pca_scale in PCA_SCALES, f"subspace.pca_scale must be one of {PCA_SCALES}")
    _check(s.rank >= 1, "subspace.rank must be >= 1")
    if s.kind == "pca":
        captures = c.swa.num_steps // c.swa.capture_frequency
        _check(
            s.rank <= min(captures, c.swa.max_deviation_cols),
            f"subspace.rank {s.rank} exceeds the {min(captures, c.swa.max_deviation_cols)} buffered deviations",
        )
    if s.kind == "curve":
        _check(s.rank == 2, "subspace.rank must be 2 for the curve subspace")
        _check(c.curve.batch_size >= 1, "curve.batch_size must be >= 1")
    i = c.inference
    _check(i.method in INFERENCE_METHODS, f"inference.method must be one of {INFERENCE_METHODS}")
    t = i.temperature
    _check(t is not None, "inference.temperature is required (a positive number or \"validate\")")
    if isinstance(t, str):
        _check(t == "validate", f"inference.temperature must be a number or \"validate\", got {t!r}")
        _check(len(i.temperature_grid) >= 1, "inference.temperature_grid must be nonempty")
        _check(i.validation_splits >= 1, "inference.validation_splits must be >= 1")
        _check(0 < i.validation_fraction < 1, "inference.validation_fraction must lie in (0, 1)")
    else:
        _check(not isinstance(t, bool) and isinstance(t, (int, float)) and t > 0, "inference.temperature must be > 0")
    _check(all(g > 0 for g in i.temperature_grid), "inference.temperature_grid values must be > 0")
    _check(i.prior_std > 0, "inference.prior_std must be > 0")
    _check(i.num_samples >= 1, "inference.num_samples must be >= 1")
    _check(i.burn_in >= 0, "inference.burn_in must be >= 0")
    _check(i.thinning >= 1, "inference.thinning must be >= 1")
    _check(i.vi_steps >= 1 and i.vi_mc_samples >= 1, "inference.vi_steps and vi_mc_samples must be >= 1")
    _check(i.vi_learning_rate > 0, "inference.vi_learning_rate must be > 0")
    p = c.protocol
    _check(p.trials >= 1, "protocol.trials must be >= 1")
    _check(p.jobs >= 1, "protocol.jobs must be >= 1")
