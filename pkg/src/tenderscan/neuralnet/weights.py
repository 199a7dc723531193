"""Binary weight files.

Layout (all integers little-endian)::

    b"TNDR"  u8 version (=1)
    repeated:  u16 name_len | name (utf-8) | u8 rank | u32 dims[rank] | f32 data[prod(dims)]
    u32 CRC32 of the entry bytes (everything between the version byte and the CRC)

The first entry is an empty tensor whose name carries the architecture,
e.g. ``__meta__/arch=xception;input_size=64;width_preset=tiny``.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import CorruptFile, VersionMismatch
from .models import Model, build_model

MAGIC = b"TNDR"
VERSION = 1
META_PREFIX = "__meta__/"


def _entry(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    parts = [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def _meta_name(model: Model) -> str:
    return (f"{META_PREFIX}arch={model.arch};input_size={model.input_size};"
            f"width_preset={model.width_preset}")


def encode_weights(model: Model) -> bytes:
    payload = [_entry(_meta_name(model), np.zeros((0,), dtype=np.float32))]
    for name, arr in model.state():
        payload.append(_entry(name, arr))
    body = b"".join(payload)
    return MAGIC + bytes([VERSION]) + body + struct.pack("<I", zlib.crc32(body))


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_weights(model: Model, path) -> Path:
    path = Path(path)
    atomic_write_bytes(path, encode_weights(model))
    return path


def decode_weights(data: bytes) -> Dict[str, np.ndarray]:
    if len(data) < 9 or data[:4] != MAGIC:
        raise CorruptFile("not a weight file (bad magic)")
    if data[4] != VERSION:
        raise VersionMismatch(f"weight file version {data[4]}, expected {VERSION}")
    body, crc = data[5:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CorruptFile("checksum mismatch (truncated or damaged file)")

    tensors: Dict[str, np.ndarray] = {}
    pos = 0
    try:
        while pos < len(body):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", body, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 4 * count > len(body):
                raise CorruptFile(f"tensor {name!r} runs past the end of the file")
            arr = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(dims)
            pos += 4 * count
            if name in tensors:
                raise CorruptFile(f"duplicate tensor {name!r}")
            tensors[name] = arr.astype(np.float64)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, CorruptFile):
            raise
        raise CorruptFile(f"malformed entry at byte {pos + 5}: {exc}") from exc
    return tensors


def _parse_meta(tensors: Dict[str, np.ndarray]) -> dict:
    metas = [k for k in tensors if k.startswith(META_PREFIX)]
    if len(metas) != 1:
        raise CorruptFile("missing architecture header")
    fields = dict(kv.split("=", 1) for kv in metas[0][len(META_PREFIX):].split(";"))
    try:
        return {"arch": fields["arch"], "input_size": int(fields["input_size"]),
                "width_preset": fields["width_preset"]}
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"bad architecture header {metas[0]!r}") from exc


def load_weights(path, model: Optional[Model] = None) -> Model:
    """Read a weight file into ``model`` (or a freshly built one)."""
    data = Path(path).read_bytes()
    tensors = decode_weights(data)
    meta = _parse_meta(tensors)
    if model is None:
        try:
            model = build_model(meta["arch"], meta["input_size"], meta["width_preset"], seed=None)
        except ValueError as exc:
            raise CorruptFile(f"cannot rebuild model: {exc}") from exc
    elif (model.arch, model.input_size, model.width_preset) != (meta["arch"], meta["input_size"], meta["width_preset"]):
        raise CorruptFile(f"file holds {meta}, model is {model!r}")

    expected = {}
    for name, layer, key in model.named_parameters():
        expected[name] = (layer.params, key)
    for name, layer, key in model.named_buffers():
        expected[name] = (layer.buffers, key)
    stored = {k: v for k, v in tensors.items() if not k.startswith(META_PREFIX)}
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))[:3]
        extra = sorted(set(stored) - set(expected))[:3]
        raise CorruptFile(f"tensor set mismatch (missing {missing}, unexpected {extra})")
    for name, (store, key) in expected.items():
        if store[key].shape != stored[name].shape:
            raise CorruptFile(f"{name}: shape {stored[name].shape}, expected {store[key].shape}")
        store[key] = stored[name].copy()
    model.initialized = True
    model.trained = True
    return model
