"""Model checkpoints: a JSON header plus raw little-endian float64 payloads."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import DraxConfig, DraxModel


class CheckpointError(Exception):
    """A checkpoint file is malformed or does not match the model."""


def save_checkpoint(model: DraxModel, path) -> None:
    """Write config and every named parameter, in registration order."""
    entries = []
    payload = bytearray()
    for name, array in model.param_arrays().items():
        entries.append({"name": name, "shape": list(array.shape)})
        payload += np.ascontiguousarray(array, dtype="<f8").tobytes()
    header = json.dumps(
        {"config": model.config.to_dict(), "params": entries}, sort_keys=True
    ).encode("utf-8")
    blob = struct.pack("<I", len(header)) + header + bytes(payload)
    Path(path).write_bytes(blob)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return the stored config dict and the name-to-array parameter map."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(raw) < 4:
        raise CheckpointError(f"checkpoint too short: {path}")
    (header_len,) = struct.unpack("<I", raw[:4])
    if 4 + header_len > len(raw):
        raise CheckpointError("checkpoint header extends past end of file")
    try:
        header = json.loads(raw[4:4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint header is not valid JSON: {exc}") from None
    if "config" not in header or "params" not in header:
        raise CheckpointError("checkpoint header missing config or params")
    arrays: dict[str, np.ndarray] = {}
    offset = 4 + header_len
    for entry in header["params"]:
        shape = tuple(int(n) for n in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + count * 8
        if end > len(raw):
            raise CheckpointError(f"checkpoint payload truncated at {entry['name']!r}")
        arrays[entry["name"]] = (
            np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        )
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after parameters")
    return header["config"], arrays


def load_model(path) -> DraxModel:
    """Rebuild the model from a checkpoint, validating every name and shape."""
    config_dict, arrays = read_checkpoint(path)
    try:
        config = DraxConfig.from_dict(config_dict)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint config invalid: {exc}") from None
    model = DraxModel(config)
    restore_parameters(model, arrays)
    return model


def restore_parameters(model: DraxModel, arrays: dict[str, np.ndarray]) -> None:
    params = model.store.params
    missing = sorted(set(params) - set(arrays))
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {', '.join(missing[:5])}")
    extra = sorted(set(arrays) - set(params))
    if extra:
        raise CheckpointError(f"checkpoint has unknown parameters: {', '.join(extra[:5])}")
    for name, param in params.items():
        if arrays[name].shape != param.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {arrays[name].shape}, "
                f"model {param.data.shape}"
            )
        param.data[...] = arrays[name]
