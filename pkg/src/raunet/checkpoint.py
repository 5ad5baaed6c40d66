"""Binary checkpoint format.

Layout (little-endian)::

    b"RAUN" | u16 version | model section | state section

Each section is ``u32 count`` followed by ``count`` tensor records::

    u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | u8 dtype (0=f32, 1=f64) | payload

The model section carries parameters, BN buffers and the model config (as
``config.*`` scalars); the state section carries Adam moments and counters.
"""

from __future__ import annotations

import io
import os
import struct
from typing import Dict, Optional, Tuple

import numpy as np

from raunet.model import ModelConfig, RaunetModel, build
from raunet.tensor import Precision

MAGIC = b"RAUN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(Exception):
    """Unreadable, truncated or incompatible checkpoint."""


def _write_section(fh, tensors: Dict[str, np.ndarray]):
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            arr = arr.astype(np.float64)
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        tag = _TAGS[arr.dtype]
        fh.write(struct.pack("<B", tag))
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("checkpoint is truncated")
    return buf


def _read_section(fh) -> Dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(fh, 1))
        dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
        (tag,) = struct.unpack("<B", _read_exact(fh, 1))
        if tag not in _DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag} for {name!r}")
        dtype = _DTYPES[tag]
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(_read_exact(fh, size * dtype.itemsize), dtype=dtype)
        out[name] = data.reshape(dims).astype(dtype.newbyteorder("="))
    return out


def encode(model_tensors: Dict[str, np.ndarray], state_tensors: Dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    _write_section(buf, model_tensors)
    _write_section(buf, state_tensors)
    return buf.getvalue()


def decode(data: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    fh = io.BytesIO(data)
    if fh.read(4) != MAGIC:
        raise CheckpointError("not a RAUN checkpoint (bad magic)")
    (version,) = struct.unpack("<H", _read_exact(fh, 2))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    model = _read_section(fh)
    state = _read_section(fh)
    if fh.read(1):
        raise CheckpointError("trailing bytes after checkpoint")
    return model, state


def _config_tensors(cfg: ModelConfig) -> Dict[str, np.ndarray]:
    return {
        "config.num_classes": np.float64(cfg.num_classes),
        "config.width_mult": np.float64(cfg.width_mult),
        "config.block_counts": np.asarray(cfg.block_counts, dtype=np.float64),
        "config.use_aam": np.float64(cfg.use_aam),
        "config.input_size": np.asarray(cfg.input_size, dtype=np.float64),
    }


def _config_from(tensors) -> ModelConfig:
    try:
        return ModelConfig(
            num_classes=int(tensors["config.num_classes"]),
            width_mult=float(tensors["config.width_mult"]),
            block_counts=tuple(int(v) for v in tensors["config.block_counts"]),
            use_aam=bool(tensors["config.use_aam"]),
            input_size=tuple(int(v) for v in tensors["config.input_size"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks {exc.args[0]}") from None


def save_checkpoint(model: RaunetModel, state_tensors: Optional[Dict[str, np.ndarray]], path) -> None:
    """Write atomically (temp file + rename) so readers never see half a file."""
    tensors = {name: t.data for name, t in model.named_tensors()}
    tensors.update(_config_tensors(model.config))
    data = encode(tensors, state_tensors or {})
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path, config: Optional[ModelConfig] = None):
    """Return ``(model, state_tensors)``; nothing is returned on any error."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    tensors, state = decode(data)
    stored = _config_from(tensors)
    cfg = config or stored
    weights = {k: v for k, v in tensors.items() if not k.startswith("config.")}
    dtypes = {v.dtype for v in weights.values()}
    if len(dtypes) != 1:
        raise CheckpointError("checkpoint mixes precisions")
    model = build(cfg, 0, Precision.of(dtypes.pop()))
    expected = dict(model.named_tensors())
    if set(expected) != set(weights):
        missing = sorted(set(expected) - set(weights))[:3]
        extra = sorted(set(weights) - set(expected))[:3]
        raise CheckpointError(f"tensor set mismatch against config (missing {missing}, unexpected {extra})")
    for name, t in expected.items():
        if t.shape != weights[name].shape:
            raise CheckpointError(f"{name}: shape {weights[name].shape} does not match config {t.shape}")
    for name, t in expected.items():
        t.data = np.ascontiguousarray(weights[name])
    return model, state
