"""Little-endian named-tensor archive.

Layout::

    b"KPLT"  u32 version=1  u32 tensor_count
    per tensor: u32 name_len, utf-8 name, u8 dtype (0=f32, 1=f64), u8 rank,
                u32 dims[rank], payload
    u32 metadata_len, utf-8 JSON metadata

Metadata is serialised with sorted keys so that save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"KPLT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    meta = json.dumps(ckpt.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"archive truncated at byte {len(self.buf)} "
                                 f"(needed {self.pos + n})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        if len(buf) < 4:
            raise TruncatedError("archive shorter than its magic bytes")
        raise MagicError(f"bad magic {buf[:4]!r}")
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        dt = _DTYPES[code]
        size = int(np.prod(dims)) if rank else 1
        payload = r.take(size * dt.itemsize)
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    (mlen,) = r.unpack("<I")
    meta = json.loads(r.take(mlen).decode("utf-8"))
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after metadata")
    return Checkpoint(tensors, meta)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    tmp.replace(path)
    return path


def load_checkpoint(path, expected_shapes: dict[str, tuple] | None = None) -> Checkpoint:
    """Read an archive; optionally verify tensor names and shapes."""
    ckpt = decode_checkpoint(Path(path).read_bytes())
    if expected_shapes is not None:
        check_shapes(ckpt, expected_shapes)
    return ckpt


def check_shapes(ckpt: Checkpoint, expected: dict[str, tuple]) -> None:
    missing = sorted(set(expected) - set(ckpt.tensors))
    if missing:
        raise ShapeMismatchError(f"archive lacks tensors {missing[:5]}")
    for name, shape in expected.items():
        got = ckpt.tensors[name].shape
        if tuple(got) != tuple(shape):
            raise ShapeMismatchError(f"{name}: archive shape {got} != expected {tuple(shape)}")
