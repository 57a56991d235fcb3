"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic          4 bytes  b"MFGC"
    version        u32
    epoch          u32
    digest_len     u32      sha256 of the canonical config JSON
    digest         bytes
    config_len     u64
    config_json    bytes    UTF-8
    n_groups       u32
    per group:
        name_len   u32, name bytes (UTF-8)
        n_tensors  u32
        per tensor:
            key_len u32, key bytes
            dtype_len u32, dtype bytes (numpy dtype string)
            ndim   u32, dims u64 each
            data_len u64, raw bytes (C order)
    sha256         32 bytes  over everything before it

Truncated or corrupted files raise CheckpointError naming the byte offset
where reading failed.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import config_digest

MAGIC = b"MFGC"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    """One saved training state: config echo plus named tensor groups."""

    epoch: int
    config: dict
    groups: dict[str, dict[str, np.ndarray]]
    version: int = FORMAT_VERSION

    def digest(self) -> bytes:
        return config_digest(self.config)


def state_dict_to_group(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {
        k: v.detach().cpu().numpy().copy()
        for k, v in module.state_dict().items()
    }


def load_group_into(module: torch.nn.Module, group: dict[str, np.ndarray]) -> None:
    state = {k: torch.as_tensor(v) for k, v in group.items()}
    module.load_state_dict(state)


def group_digest(group: dict[str, np.ndarray]) -> str:
    """Order-independent content hash of one tensor group."""
    h = hashlib.sha256()
    for key in sorted(group):
        arr = np.ascontiguousarray(group[key])
        h.update(key.encode("utf-8"))
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def _pack_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    buf.write(struct.pack("<I", ckpt.epoch))
    digest = ckpt.digest()
    buf.write(struct.pack("<I", len(digest)))
    buf.write(digest)
    config_raw = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(config_raw)))
    buf.write(config_raw)
    buf.write(struct.pack("<I", len(ckpt.groups)))
    for name in sorted(ckpt.groups):
        _pack_str(buf, name)
        group = ckpt.groups[name]
        buf.write(struct.pack("<I", len(group)))
        for key in sorted(group):
            arr = np.ascontiguousarray(group[key])
            _pack_str(buf, key)
            _pack_str(buf, str(arr.dtype))
            buf.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                buf.write(struct.pack("<Q", d))
            raw = arr.tobytes()
            buf.write(struct.pack("<Q", len(raw)))
            buf.write(raw)
    body = buf.getvalue()
    checksum = hashlib.sha256(body).digest()
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    tmp.write_bytes(body + checksum)
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes at offset {self.pos}, "
                f"file ends at {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        start = self.pos
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"corrupt string at offset {start}: {e}") from e


def load_checkpoint(path: str | Path) -> Checkpoint:
    # structure is parsed before the checksum so a truncated file reports
    # the byte offset where the data ran out instead of a bare hash mismatch
    raw = Path(path).read_bytes()
    if len(raw) < 36:
        raise CheckpointError(f"file too short to be a checkpoint ({len(raw)} bytes)")
    body, checksum = raw[:-32], raw[-32:]
    r = _Reader(body)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    epoch = r.u32()
    digest = r.take(r.u32())
    try:
        config = json.loads(r.take(r.u64()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt config block: {e}") from e
    if config_digest(config) != digest:
        raise CheckpointError("config digest mismatch")
    groups: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(r.u32()):
        name = r.string()
        tensors: dict[str, np.ndarray] = {}
        for _ in range(r.u32()):
            key = r.string()
            try:
                dtype = np.dtype(r.string())
            except (TypeError, ValueError) as e:
                raise CheckpointError(f"corrupt tensor header: {e}") from e
            ndim = r.u32()
            shape = tuple(r.u64() for _ in range(ndim))
            data = r.take(r.u64())
            try:
                tensors[key] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
            except ValueError as e:
                raise CheckpointError(f"corrupt tensor payload for {key!r}: {e}") from e
        groups[name] = tensors
    if r.pos != len(body):
        raise CheckpointError(f"{len(body) - r.pos} trailing bytes after offset {r.pos}")
    if hashlib.sha256(body).digest() != checksum:
        raise CheckpointError("checksum mismatch: file corrupted")
    return Checkpoint(epoch=epoch, config=config, groups=groups, version=version)


def list_checkpoints(directory: str | Path, pattern: str = "*.mfgc") -> list[Path]:
    """Checkpoint files in a directory, sorted by epoch then name."""
    paths = sorted(Path(directory).glob(pattern))
    def key(p: Path):
        try:
            return (load_checkpoint(p).epoch, p.name)
        except CheckpointError:
            return (1 << 31, p.name)
    return sorted(paths, key=key)
