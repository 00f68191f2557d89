"""Versioned JSON checkpoints with bit-exact parameter round-trips.

Parameter arrays are stored as base64 of their little-endian float64 bytes,
and the container is dumped with sorted keys, so saving the same model twice
produces byte-identical files.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .fusion import ConcatModel, FusionModel, ModalitySpec

CHECKPOINT_VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape),
            "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(obj["shape"])


def save_checkpoint(model, path, config_hash: str = "") -> None:
    """Serialize a fusion or concat model with all parameters."""
    if isinstance(model, FusionModel):
        kind = "fusion"
        extra = {"pool": model.pool}
    elif isinstance(model, ConcatModel):
        kind = "concat"
        extra = {"slots": model.slots}
    else:
        raise TypeError(f"cannot checkpoint object of type {type(model).__name__}")
    obj = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "model_kind": kind,
        "config_hash": config_hash,
        "specs": [s.to_dict() for s in model.specs],
        "num_classes": model.num_classes,
        "dim": model.dim,
        "predictor_hidden": list(model.predictor_hidden),
        "embed_dim": model.embed_dim,
        "num_filters": model.num_filters,
        "kernel_widths": list(model.kernel_widths),
        "dropout_p": model.dropout_p,
        "class_prior": model.class_prior,
        "params": {name: _encode_array(p.data)
                   for name, p in model.named_parameters().items()},
        **extra,
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path):
    """Rebuild the model and restore its parameters bit-exactly."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint is not valid JSON: {exc}", field=str(path))
    if obj.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint_version {obj.get('checkpoint_version')!r}")
    specs = [ModalitySpec.from_dict(d) for d in obj["specs"]]
    common = dict(num_classes=obj["num_classes"], dim=obj["dim"],
                  predictor_hidden=tuple(obj["predictor_hidden"]),
                  embed_dim=obj["embed_dim"], num_filters=obj["num_filters"],
                  kernel_widths=tuple(obj["kernel_widths"]),
                  dropout_p=obj["dropout_p"], class_prior=obj["class_prior"])
    kind = obj.get("model_kind")
    if kind == "fusion":
        model = FusionModel(specs, pool=obj["pool"], **common)
    elif kind == "concat":
        model = ConcatModel(specs, slots=obj["slots"], **common)
    else:
        raise DataError(f"unknown model_kind {kind!r}")
    params = model.named_parameters()
    stored = obj["params"]
    if set(params) != set(stored):
        missing = set(params) ^ set(stored)
        raise DataError(f"checkpoint parameters do not match the model: {sorted(missing)}")
    for name, p in params.items():
        arr = _decode_array(stored[name])
        if arr.shape != p.data.shape:
            raise DataError(
                f"parameter {name!r} has shape {arr.shape}, expected {p.data.shape}")
        p.data = np.ascontiguousarray(arr)
    return model, obj["config_hash"]
