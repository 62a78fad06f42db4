"""Binary checkpoint format.

Layout, all integers little-endian::

    b"ROMA"  u32 version
    u32 n  + n bytes JSON   {"model": ..., "train": ...}
    u32 count, then count tensor blocks          parameters
    u32 n  + n bytes JSON   optimizer hyper-parameters and step
    u32 count, then count tensor blocks          moments, named "m/<param>" and "v/<param>"
    u32 n  + n bytes JSON   RNG state of the data order
    u64 training step
    u32 CRC-32 of every preceding byte

A tensor block is ``u32 name_len, name (utf-8), u32 ndim, ndim x u64 dims,
prod(dims) x f64``.  Files are written to a temporary sibling and renamed,
and a load validates the whole file before anything is applied.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from roma.errors import FormatError, IntegrityError, ShapeError

MAGIC = b"ROMA"
VERSION = 1

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


@dataclass
class Checkpoint:
    model_config: dict
    train_config: dict
    params: dict[str, np.ndarray]
    optim: dict
    moments: dict[str, np.ndarray] = field(default_factory=dict)
    rng: dict = field(default_factory=dict)
    step: int = 0
    version: int = VERSION


# -- writing -------------------------------------------------------------------

def _json_block(obj) -> bytes:
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    return _U32.pack(len(raw)) + raw


def _tensor_block(name: str, arr: np.ndarray) -> bytes:
    raw_name = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    parts = [_U32.pack(len(raw_name)), raw_name, _U32.pack(arr.ndim)]
    parts += [_U64.pack(d) for d in arr.shape]
    parts.append(arr.tobytes())
    return b"".join(parts)


def encode(ckpt: Checkpoint) -> bytes:
    body = [MAGIC, _U32.pack(ckpt.version)]
    body.append(_json_block({"model": ckpt.model_config, "train": ckpt.train_config}))
    body.append(_U32.pack(len(ckpt.params)))
    body += [_tensor_block(n, ckpt.params[n]) for n in sorted(ckpt.params)]
    body.append(_json_block(ckpt.optim))
    body.append(_U32.pack(len(ckpt.moments)))
    body += [_tensor_block(n, ckpt.moments[n]) for n in sorted(ckpt.moments)]
    body.append(_json_block(ckpt.rng))
    body.append(_U64.pack(ckpt.step))
    data = b"".join(body)
    return data + _U32.pack(zlib.crc32(data))


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    """Write atomically: a crash mid-write never leaves a half-written file at ``path``."""
    path = Path(path)
    data = encode(ckpt)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
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
    return path


# -- reading -------------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise IntegrityError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def json(self):
        raw = self.take(self.u32())
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"checkpoint JSON block is malformed: {exc}") from None

    def tensor(self) -> tuple[str, np.ndarray]:
        try:
            name = self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("checkpoint tensor name is not utf-8") from None
        ndim = self.u32()
        if ndim > 8:
            raise FormatError(f"tensor {name!r}: implausible rank {ndim}")
        shape = tuple(self.u64() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = self.take(8 * count)
        return name, np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def decode(data: bytes) -> Checkpoint:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("not a roma checkpoint (bad magic)")
    version = _U32.unpack(data[4:8])[0]
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if len(data) < 12:
        raise IntegrityError("checkpoint truncated")
    body, (crc,) = data[:-4], _U32.unpack(data[-4:])
    if zlib.crc32(body) != crc:
        raise IntegrityError("checkpoint checksum mismatch (corrupted or truncated file)")
    r = _Reader(body)
    r.take(8)
    configs = r.json()
    params = dict(r.tensor() for _ in range(r.u32()))
    optim = r.json()
    moments = dict(r.tensor() for _ in range(r.u32()))
    rng = r.json()
    step = r.u64()
    if r.pos != len(body):
        raise FormatError(f"{len(body) - r.pos} trailing bytes after the step field")
    if not isinstance(configs, dict) or "model" not in configs or "train" not in configs:
        raise FormatError("checkpoint config block lacks model/train sections")
    return Checkpoint(configs["model"], configs["train"], params, optim, moments, rng, step, version)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())


def check_moments(params: dict[str, np.ndarray], moments: dict[str, np.ndarray]) -> None:
    """Every moment buffer must mirror an existing parameter's shape."""
    for key, arr in moments.items():
        kind, _, name = key.partition("/")
        if kind not in ("m", "v") or name not in params:
            raise FormatError(f"unexpected optimizer buffer {key!r}")
        if arr.shape != params[name].shape:
            raise ShapeError(f"optimizer buffer {key!r}: shape {arr.shape} != parameter shape {params[name].shape}")
