"""Versioned model checkpoints (npz container, JSON header, SHA-256 over parameters)."""

from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .model import LayerSpec, Model

FORMAT = "cryage-cnn"
VERSION = 1


def _digest(model: Model) -> str:
    h = hashlib.sha256()
    for i, name, arr in model.param_list():
        h.update(f"{i}:{name}:{arr.dtype.str}:{arr.shape}".encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def save_checkpoint(path, model: Model) -> None:
    header = {
        "format": FORMAT,
        "version": VERSION,
        "input_shape": list(model.input_shape),
        "rng_seed": model.rng_seed,
        "dtype": model.dtype.str,
        "layers": [spec.to_dict() for spec in model.layers],
        "sha256": _digest(model),
    }
    arrays = {f"L{i}_{name}": arr for i, name, arr in model.param_list()}
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> Model:
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            header = json.loads(bytes(data["header"]).decode())
            arrays = {k: data[k] for k in data.files if k != "header"}
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')} v{header.get('version')}")
    layers = [LayerSpec(**d) for d in header["layers"]]
    model = Model(layers, tuple(header["input_shape"]), header["rng_seed"], np.dtype(header["dtype"]))
    for i, name, arr in model.param_list():
        key = f"L{i}_{name}"
        if key not in arrays or arrays[key].shape != arr.shape:
            raise CheckpointError(f"parameter {key} missing or misshapen")
        model.params[i][name] = arrays[key].astype(model.dtype)
    if _digest(model) != header["sha256"]:
        raise CheckpointError("checksum mismatch: parameters are corrupted")
    return model
