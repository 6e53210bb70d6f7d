"""Versioned binary persistence for trained models (`.rogpl` files).

Layout (all integers little-endian):

    magic "ROGPL\\x00" | format version u32 | payload length u64 |
    crc32(payload) u32 | payload

The payload is a length-prefixed JSON metadata blob (config snapshot,
class count, diagnostics) followed by named tensors, each stored as
``name, dtype code, ndim, dims, raw bytes``. Round-trips are bit-exact.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import asdict

import numpy as np

from .pipeline import Model, PrototypePool, TrainConfig

MAGIC = b"ROGPL\x00"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


class ModelFormatError(ValueError):
    """Raised for unreadable, truncated, or corrupted model files."""


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr)
    if data.dtype == np.float64:
        code = 0
    elif data.dtype == np.int64:
        code = 1
    else:
        raise ValueError(f"unsupported tensor dtype {data.dtype} for {name}")
    encoded = name.encode("utf-8")
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<BB", code, data.ndim))
    for dim in data.shape:
        buf.write(struct.pack("<Q", dim))
    buf.write(data.astype(_DTYPES[code], copy=False).tobytes())


def _read_tensor(buf: io.BytesIO) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _take(buf, 2))
    name = _take(buf, name_len).decode("utf-8")
    code, ndim = struct.unpack("<BB", _take(buf, 2))
    if code not in _DTYPES:
        raise ModelFormatError(f"unknown dtype code {code}")
    shape = tuple(struct.unpack("<Q", _take(buf, 8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    raw = _take(buf, count * 8)
    arr = np.frombuffer(raw, dtype=_DTYPES[code]).reshape(shape).copy()
    return name, arr


def _take(buf: io.BytesIO, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise ModelFormatError("truncated model file")
    return data


def save_model(model: Model, path: str) -> None:
    """Serialize a model; repeated save -> load -> save is byte-identical."""
    meta = {
        "n_classes": model.n_classes,
        "config": asdict(model.config),
        "diagnostics": model.diagnostics,
        "noise_config": model.noise_config,
    }
    payload = io.BytesIO()
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload.write(struct.pack("<I", len(meta_bytes)))
    payload.write(meta_bytes)

    tensors: list[tuple[str, np.ndarray]] = [
        ("w1", model.params.w1), ("b1", model.params.b1),
        ("w2", model.params.w2), ("b2", model.params.b2),
        ("interior", model.pool.interior),
    ]
    if model.clean_mask is not None:
        tensors.append(("clean_mask", model.clean_mask.astype(np.int64)))
    for c in range(model.n_classes):
        tensors.append((f"border_{c}", model.pool.border[c]))
        tensors.append((f"border_clusters_{c}", model.pool.border_clusters[c]))
    payload.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _write_tensor(payload, name, arr)

    blob = payload.getvalue()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(struct.pack("<I", zlib.crc32(blob)))
        f.write(blob)


def load_model(path: str) -> Model:
    """Load a `.rogpl` file, checking magic, version, length, and checksum."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 16 or not raw.startswith(MAGIC):
        raise ModelFormatError("bad magic bytes; not a model file")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    (length,) = struct.unpack_from("<Q", raw, off)
    off += 8
    (crc,) = struct.unpack_from("<I", raw, off)
    off += 4
    blob = raw[off:off + length]
    if len(blob) != length:
        raise ModelFormatError("truncated model file")
    if zlib.crc32(blob) != crc:
        raise ModelFormatError("checksum mismatch; file is corrupted")

    buf = io.BytesIO(blob)
    (meta_len,) = struct.unpack("<I", _take(buf, 4))
    meta = json.loads(_take(buf, meta_len).decode("utf-8"))
    (n_tensors,) = struct.unpack("<I", _take(buf, 4))
    tensors = dict(_read_tensor(buf) for _ in range(n_tensors))

    from .encoder import GcnParams

    n_classes = meta["n_classes"]
    params = GcnParams(w1=tensors["w1"], b1=tensors["b1"],
                       w2=tensors["w2"], b2=tensors["b2"])
    pool = PrototypePool(
        interior=tensors["interior"],
        border=[tensors[f"border_{c}"] for c in range(n_classes)],
        border_clusters=[tensors[f"border_clusters_{c}"] for c in range(n_classes)])
    cfg_fields = dict(meta["config"])
    mask = tensors.get("clean_mask")
    return Model(params=params, pool=pool, config=TrainConfig(**cfg_fields),
                 n_classes=n_classes, diagnostics=meta["diagnostics"],
                 noise_config=meta["noise_config"],
                 clean_mask=None if mask is None else mask.astype(bool))
