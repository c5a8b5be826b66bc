"""Binary container for trajectories, observations, and model weights.

Layout (all integers little-endian):

    magic   4 bytes  b"PIDM"
    version u32      currently 1
    meta    u32 length + UTF-8 JSON (sorted keys)
    count   u32 number of named arrays
    arrays  per array: u16 name length + name, u8 ndim,
            u64 per-axis sizes, raw float64 payload

json round-trips float64 exactly (repr produces the shortest string that
parses back to the same double), so metadata floats stay bit-exact.
Writes go through a temp file and os.replace so readers never observe a
partial file.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import ContainerError

MAGIC = b"PIDM"
VERSION = 1


def write_container(path: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<I", VERSION)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload += struct.pack("<I", len(meta_bytes))
    payload += meta_bytes
    payload += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        payload += struct.pack("<H", len(name_bytes))
        payload += name_bytes
        payload += struct.pack("<B", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        payload += arr.tobytes(order="C")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob: bytes, path: str) -> None:
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ContainerError(
                f"{self.path}: truncated container (wanted {n} bytes at offset {self.pos})"
            )
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    magic = r.take(4)
    if magic != MAGIC:
        raise ContainerError(f"{path}: bad magic {magic!r} (expected {MAGIC!r})")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt metadata block ({exc})") from exc
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        n_items = int(np.prod(shape)) if shape else 1
        raw = r.take(n_items * 8)
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    if r.pos != len(blob):
        raise ContainerError(f"{path}: {len(blob) - r.pos} trailing bytes after payload")
    return meta, arrays


def data_dir() -> str:
    """Directory that relative output paths resolve against (PIDM_DATA_DIR)."""
    return os.environ.get("PIDM_DATA_DIR", "")


def resolve_path(path: str) -> str:
    base = data_dir()
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path
