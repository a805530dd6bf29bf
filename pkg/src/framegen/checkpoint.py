"""VFCK checkpoint container.

Layout (all integers little-endian)::

    b"VFCK" | u32 version | u32 section count
    per section: u32 name length | name (utf-8) | u64 payload length | payload

Tensor sections (autoencoder, denoiser, condencoder, schedule) hold a tensor
table: u32 count, then per tensor u32 name length | name | u8 dtype code
(0 = float32, 1 = float64, 2 = int64) | u32 ndim | u32 dims... | raw data.
The config section is UTF-8 JSON.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"VFCK"
VERSION = 1
SECTIONS = ("autoencoder", "denoiser", "condencoder", "schedule", "config")

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8"}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class CheckpointError(ValueError):
    pass


def pack_tensors(tensors: dict[str, torch.Tensor | np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy() if torch.is_tensor(t) else np.asarray(t)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw)) + raw)
        out.write(struct.pack("<BI", code, arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return out.getvalue()


def unpack_tensors(buf: bytes) -> dict[str, torch.Tensor]:
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("tensor table is truncated")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        code, ndim = struct.unpack("<BI", take(5))
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for {name}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = np.dtype(_DTYPES[code])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(bytes(take(n * dt.itemsize)), dtype=dt).reshape(shape)
        out[name] = torch.from_numpy(arr.astype(dt.newbyteorder("=")))
    return out


def write_checkpoint(path, sections: dict[str, bytes]) -> None:
    missing = [s for s in SECTIONS if s not in sections]
    if missing:
        raise CheckpointError(f"missing sections {missing}")
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<II", VERSION, len(sections)))
    for name, payload in sections.items():
        raw = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw)) + raw + struct.pack("<Q", len(payload)) + payload)
    Path(path).write_bytes(out.getvalue())


def read_checkpoint(path) -> dict[str, bytes]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r}")
    if len(buf) < 12:
        raise CheckpointError("header truncated")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unknown checkpoint version {version}")
    pos = 12
    sections = {}
    for _ in range(count):
        if pos + 4 > len(buf):
            raise CheckpointError("section header truncated")
        (nlen,) = struct.unpack_from("<I", buf, pos)
        if pos + 4 + nlen + 8 > len(buf):
            raise CheckpointError("section header truncated")
        name = buf[pos + 4 : pos + 4 + nlen].decode("utf-8")
        pos += 4 + nlen
        (plen,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        if pos + plen > len(buf):
            raise CheckpointError(f"section {name!r} truncated")
        sections[name] = buf[pos : pos + plen]
        pos += plen
    missing = [s for s in SECTIONS if s not in sections]
    if missing:
        raise CheckpointError(f"missing sections {missing}")
    return sections


def pack_config(cfg: dict) -> bytes:
    return json.dumps(cfg, sort_keys=True).encode("utf-8")


def unpack_config(buf: bytes) -> dict:
    return json.loads(buf.decode("utf-8"))
