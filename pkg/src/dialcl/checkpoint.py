"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"DCLR"  u32 version
    u64 header_len, header: UTF-8 JSON with sorted keys
    u32 n_tensors, then per tensor:
        u16 name_len, name, u8 dtype (1 = float64), u8 ndim, u64 * ndim shape,
        u64 offset (from payload start), u64 nbytes
    payloads, row-major float64
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DCLR"
FORMAT_VERSION = 1
_DTYPES = {1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    header: dict
    tensors: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def step(self) -> int:
        return int(self.header.get("step", 0))


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False).encode("ascii")


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = canonical_json(ckpt.header)
    names = sorted(ckpt.tensors)
    directory = [struct.pack("<I", len(names))]
    payloads = []
    offset = 0
    for name in names:
        arr = np.asarray(ckpt.tensors[name], dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
        raw = arr.tobytes(order="C")
        nb = name.encode("utf-8")
        directory.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", 1, arr.ndim))
        directory.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        directory.append(struct.pack("<QQ", offset, len(raw)))
        payloads.append(raw)
        offset += len(raw)
    return b"".join([MAGIC, struct.pack("<I", ckpt.version), struct.pack("<Q", len(header)), header,
                     *directory, *payloads])


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})")
    (hlen,) = r.unpack("<Q")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    (n,) = r.unpack("<I")
    entries = []
    for _ in range(n):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"tensor {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        off, nbytes = r.unpack("<QQ")
        entries.append((name, _DTYPES[code], tuple(shape), off, nbytes))
    base = r.pos
    tensors = {}
    for name, dtype, shape, off, nbytes in entries:
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise CheckpointError(f"tensor {name!r}: payload size does not match shape {shape}")
        if base + off + nbytes > len(buf):
            raise CheckpointError(f"truncated checkpoint: tensor {name!r} runs past end of file")
        arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=base + off)
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return Checkpoint(header, tensors, version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return from_bytes(buf)
