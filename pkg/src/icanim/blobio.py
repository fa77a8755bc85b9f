"""Self-describing tensor files.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"ICANIM01"
    bytes 8..11   uint32 header length N
    bytes 12..    N bytes of UTF-8 JSON header
    then          raw tensor data, concatenated in header order

The header carries caller metadata plus ``tensors``: a list of
``{"name", "dtype", "shape"}``; each tensor is stored C-contiguous in
its little-endian dtype. Writes go to a temporary sibling and are
renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"ICANIM01"
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_blob(path: str | Path, header: Mapping, tensors: Mapping[str, torch.Tensor]) -> None:
    meta = []
    chunks = []
    for name, t in tensors.items():
        arr = t.detach().cpu().contiguous().numpy()
        dt = str(arr.dtype)
        if dt not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dt} for {name}")
        meta.append({"name": name, "dtype": dt, "shape": list(arr.shape)})
        chunks.append(arr.astype(_DTYPES[dt], copy=False).tobytes())
    head = dict(header)
    head["tensors"] = meta
    hb = json.dumps(head, sort_keys=True).encode()
    atomic_write_bytes(path, MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(chunks))


def read_blob(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        head = json.loads(raw[12 : 12 + n])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt header") from e
    off = 12 + n
    tensors = {}
    for m in head.get("tensors", []):
        dt = np.dtype(_DTYPES[m["dtype"]])
        count = int(np.prod(m["shape"], dtype=np.int64))
        end = off + count * dt.itemsize
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated at tensor {m['name']}")
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(m["shape"])
        tensors[m["name"]] = torch.from_numpy(arr.astype(m["dtype"]))
        off = end
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return head, tensors
