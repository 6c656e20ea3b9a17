"""Checkpoint directories: ``manifest.json`` plus raw little-endian float32 payloads.

``params.bin`` holds every encoder tensor row-major, concatenated in manifest
order. When optimizer moments are saved they go to ``optimizer.bin`` with
their own table in the manifest.
"""
from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .encoder import EncoderState, parameter_shapes

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
PARAMS = "params.bin"
OPTIMIZER = "optimizer.bin"
_DTYPE = np.dtype("<f4")


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def _table(tensors: dict[str, np.ndarray]) -> tuple[list[dict], bytes]:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        entries.append({"name": name, "dtype": "float32", "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    return entries, b"".join(chunks)


def _write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(state: EncoderState, metadata: dict, path: str | Path,
                    optimizer: dict | None = None) -> Path:
    """Write ``state`` (cast to float32) and JSON-serializable ``metadata``.

    ``optimizer`` is an optional ``{"step": int, "m": {...}, "v": {...}}``
    mapping of moment tensors keyed like the parameters.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, payload = _table(state.params)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": state.config.to_dict(),
        "tensors": entries,
        "payload_bytes": len(payload),
        "metadata": metadata,
    }
    if optimizer is not None:
        moments = {f"m/{k}": v for k, v in optimizer["m"].items()}
        moments.update({f"v/{k}": v for k, v in optimizer["v"].items()})
        opt_entries, opt_payload = _table(moments)
        manifest["optimizer"] = {
            "step": int(optimizer["step"]),
            "tensors": opt_entries,
            "payload_bytes": len(opt_payload),
        }
        _write(path / OPTIMIZER, opt_payload)
    elif (path / OPTIMIZER).exists():
        (path / OPTIMIZER).unlink()
    _write(path / PARAMS, payload)
    _write(path / MANIFEST, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return path


def _read_table(raw: bytes, entries: list[dict], expected_bytes: int, what: str) -> dict[str, np.ndarray]:
    if len(raw) != expected_bytes:
        raise CheckpointTruncatedError(
            f"{what}: payload has {len(raw)} bytes, manifest declares {expected_bytes}"
        )
    out = {}
    for e in entries:
        if e.get("dtype") != "float32":
            raise CheckpointShapeError(f"{what}: unsupported dtype {e.get('dtype')!r} for {e['name']}")
        n = math.prod(e["shape"]) * _DTYPE.itemsize
        start = e["offset"]
        if start < 0 or start + n > len(raw):
            raise CheckpointTruncatedError(f"{what}: tensor {e['name']} runs past end of payload")
        out[e["name"]] = np.frombuffer(raw, dtype=_DTYPE, count=n // _DTYPE.itemsize,
                                       offset=start).reshape(e["shape"]).astype(np.float32)
    return out


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint manifest at {path}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version!r}, this reader supports {FORMAT_VERSION}"
        )
    return manifest


def load_checkpoint(path: str | Path, dtype=np.float32) -> tuple[EncoderState, dict]:
    path = Path(path)
    manifest = read_manifest(path)
    config = ModelConfig.from_dict(manifest["model_config"])
    expected = {k: list(v) for k, v in parameter_shapes(config).items()}
    stored = {e["name"]: e["shape"] for e in manifest["tensors"]}
    if stored != expected:
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        wrong = sorted(k for k in set(stored) & set(expected) if stored[k] != expected[k])
        raise CheckpointShapeError(
            f"tensor table does not match model config (missing={missing[:3]}, "
            f"unexpected={extra[:3]}, wrong shape={wrong[:3]})"
        )
    tensors = _read_table((path / PARAMS).read_bytes(), manifest["tensors"],
                          manifest["payload_bytes"], PARAMS)
    params = {name: tensors[name].astype(dtype, copy=False) for name in expected}
    return EncoderState(config, params), manifest.get("metadata", {})


def load_optimizer(path: str | Path) -> dict | None:
    """Moment tensors saved next to the parameters, or None if absent."""
    path = Path(path)
    manifest = read_manifest(path)
    opt = manifest.get("optimizer")
    if opt is None:
        return None
    tensors = _read_table((path / OPTIMIZER).read_bytes(), opt["tensors"],
                          opt["payload_bytes"], OPTIMIZER)
    m = {k[2:]: v for k, v in tensors.items() if k.startswith("m/")}
    v = {k[2:]: v for k, v in tensors.items() if k.startswith("v/")}
    return {"step": opt["step"], "m": m, "v": v}
