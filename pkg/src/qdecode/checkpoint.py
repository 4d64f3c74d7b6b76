"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes   b"QDCKPT\\x00\\x01"
    version      uint32    currently 1
    meta_len     uint32    length of the UTF-8 JSON metadata blob
    meta         bytes     JSON object, keys sorted
    n_tensors    uint32
    per tensor, in name order:
      name_len   uint16
      name       bytes     UTF-8
      ndim       uint8
      dims       ndim x uint32
      data       prod(dims) x float64 little-endian, C order

Writes go to a temporary file that is renamed into place, so a failed run
never leaves a partial checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import InvalidArgument

MAGIC = b"QDCKPT\x00\x01"
VERSION = 1


def dumps(tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    meta_blob = json.dumps(dict(meta or {}), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_blob)), meta_blob, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    try:
        return _parse(blob)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, InvalidArgument):
            raise
        raise InvalidArgument(f"corrupt checkpoint: {exc}") from None


def _parse(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise InvalidArgument("not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {version}")
    pos = 16
    meta = json.loads(blob[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * n
    if pos != len(blob):
        raise InvalidArgument("trailing bytes after last tensor")
    return tensors, meta


def save(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    path = Path(path)
    blob = dumps(tensors, meta)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
