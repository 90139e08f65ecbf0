"""Tensor blob files and atomic writes.

Blob layout, all little-endian::

    magic    4 bytes   b"CDTB"
    version  uint32
    count    uint32
    count x:
        name_len uint32, name utf-8 bytes,
        rank uint32, dims uint64 * rank,
        values float64 * prod(dims)   (row-major)

Checkpoints pair a blob with a ``.json`` sidecar of hyperparameters.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CDTB"
VERSION = 1


class BlobFormatError(ValueError):
    pass


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path: str | os.PathLike, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


def read_json(path: str | os.PathLike):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def encode_blob(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.array(arr, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_blob(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise BlobFormatError("bad magic bytes")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise BlobFormatError(f"unsupported blob version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(dims)
            off += 8 * n
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise BlobFormatError(f"truncated or corrupt blob: {exc}") from None
    if off != len(data):
        raise BlobFormatError(f"{len(data) - off} trailing bytes")
    return out


def write_blob(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_blob(tensors))


def read_blob(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return decode_blob(Path(path).read_bytes())


def sidecar_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray], meta: dict) -> None:
    write_blob(path, tensors)
    write_json(sidecar_path(path), meta)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    return read_blob(path), read_json(sidecar_path(path))


def config_hash(obj) -> str:
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
