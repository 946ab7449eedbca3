"""Versioned JSON envelopes for checkpoints, subspaces and sample sets.

Arrays are stored as base64 of little-endian float64 bytes plus a shape,
so a round trip is bit-exact.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from ..errors import DataError
from ..inference import SampleSet
from ..net import Architecture, ParamVector
from ..subspace import Subspace
from ..train import DeviationBuffer

FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


def encode_array(a) -> dict:
    a = np.ascontiguousarray(np.asarray(a, dtype=_LE_F64))
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(obj) -> np.ndarray:
    try:
        raw = base64.b64decode(obj["data"], validate=True)
        shape = tuple(int(s) for s in obj["shape"])
    except (KeyError, TypeError, ValueError) as err:
        raise DataError(f"malformed array payload: {err}") from None
    a = np.frombuffer(raw, dtype=_LE_F64)
    if a.size != int(np.prod(shape, dtype=np.int64)):
        raise DataError(f"array payload has {a.size} values, shape {shape} needs {int(np.prod(shape))}")
    return a.reshape(shape).astype(np.float64)


def _envelope(kind: str, data: dict, meta=None) -> dict:
    return {"format_version": FORMAT_VERSION, "kind": kind, "meta": dict(meta or {}), "data": data}


def _write(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh)


def _read(path, kind: str):
    """Returns ``(data, meta)`` after checking version and kind."""
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: not valid JSON ({err.msg})", line=err.lineno) from None
    if not isinstance(obj, dict) or "format_version" not in obj:
        raise DataError(f"{path}: missing format_version")
    if obj["format_version"] != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format_version {obj['format_version']!r}")
    if obj.get("kind") != kind:
        raise DataError(f"{path}: expected kind {kind!r}, found {obj.get('kind')!r}")
    if "data" not in obj:
        raise DataError(f"{path}: missing data section")
    return obj["data"], obj.get("meta", {})


def checkpoint_payload(arch: Architecture, params: ParamVector, buffer: DeviationBuffer = None) -> dict:
    payload = {"architecture": arch.to_dict(), "params": encode_array(params.to_array())}
    if buffer is not None:
        payload["deviations"] = {
            "max_cols": buffer.max_cols,
            "n_captured": buffer.n_captured,
            "matrix": encode_array(buffer.matrix() if len(buffer) else np.zeros((0, arch.num_weights))),
        }
    return payload


def save_checkpoint(path, arch, params, meta=None, buffer=None):
    _write(path, _envelope("checkpoint", checkpoint_payload(arch, params, buffer), meta))


def load_checkpoint(path):
    """Returns ``(arch, params, meta, buffer_or_None)``."""
    p, meta = _read(path, "checkpoint")
    arch = Architecture.from_dict(p["architecture"])
    params = ParamVector.from_array(decode_array(p["params"]))
    if params.weights.shape[0] != arch.num_weights:
        raise DataError(f"{path}: {params.weights.shape[0]} weights for an architecture with {arch.num_weights}")
    buffer = None
    if "deviations" in p:
        d = p["deviations"]
        buffer = DeviationBuffer(int(d["max_cols"]))
        for row in decode_array(d["matrix"]):
            buffer.columns.append(row)
        buffer.n_captured = int(d["n_captured"])
    return arch, params, meta, buffer


def save_subspace(path, sub: Subspace, arch: Architecture = None, meta=None):
    payload = {
        "kind": sub.kind,
        "shift": encode_array(sub.shift.to_array()),
        "projection": encode_array(sub.projection),
    }
    if sub.singular_values is not None:
        payload["singular_values"] = encode_array(sub.singular_values)
    if arch is not None:
        payload["architecture"] = arch.to_dict()
    _write(path, _envelope("subspace", payload, meta))


def load_subspace(path):
    """Returns ``(subspace, arch_or_None)``."""
    p, _ = _read(path, "subspace")
    sv = decode_array(p["singular_values"]) if "singular_values" in p else None
    sub = Subspace(
        ParamVector.from_array(decode_array(p["shift"])),
        decode_array(p["projection"]),
        p["kind"],
        sv,
    )
    arch = Architecture.from_dict(p["architecture"]) if "architecture" in p else None
    return sub, arch


def save_samples(path, samples: SampleSet):
    payload = {
        "provenance": samples.provenance,
        "samples": encode_array(samples.samples),
        "log_posteriors": encode_array(samples.log_posteriors),
    }
    _write(path, _envelope("samples", payload, samples.meta))


def load_samples(path) -> SampleSet:
    p, meta = _read(path, "samples")
    return SampleSet(decode_array(p["samples"]), decode_array(p["log_posteriors"]), p["provenance"], meta)
