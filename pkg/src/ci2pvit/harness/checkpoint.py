"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"CI2P" | version u32 | entry_count u32
    entry*: name_len u32 | name utf-8 | dtype u8 (0=f32, 1=f64) | rank u8
            | dims u64[rank] | payload (little-endian, row-major)
    crc32 u32 over every preceding byte
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

from ..core.params import ParamStore
from ..core.tensor import Tensor
from ..errors import CheckpointCRCError, CheckpointError, CheckpointVersionError

MAGIC = b"CI2P"
FORMAT_VERSION = 1
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _arrays(store) -> list[tuple[str, np.ndarray]]:
    if isinstance(store, ParamStore):
        return [(n, t.data) for n, t in store.items()]
    return [(n, v.data if isinstance(v, Tensor) else np.asarray(v)) for n, v in store.items()]


def checkpoint_bytes(store: ParamStore | Mapping[str, np.ndarray]) -> bytes:
    items = _arrays(store)
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(items))]
    for name, arr in items:
        code = DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"'{name}': unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=CODE_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(store: ParamStore | Mapping[str, np.ndarray], path) -> None:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(store))
    os.replace(tmp, path)


def parse_checkpoint(blob: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a CI2P checkpoint (bad magic or too short)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointCRCError(f"{source}: CRC mismatch (file truncated or corrupt)")
    version, count = struct.unpack_from("<II", body, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{source}: format version {version}, expected {FORMAT_VERSION}")
    out: dict[str, np.ndarray] = {}
    pos = 12
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            code, rank = struct.unpack_from("<BB", body, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            dtype = CODE_DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(body):
                raise CheckpointError(f"{source}: payload of '{name}' runs past end of file")
            arr = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
            out[name] = arr.reshape(dims).astype(dtype.newbyteorder("="))
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{source}: malformed entry table ({exc})") from exc
    if pos != len(body):
        raise CheckpointError(f"{source}: {len(body) - pos} trailing bytes after last entry")
    return out


def load_checkpoint(path) -> ParamStore:
    """Read a checkpoint into a fresh store; every entry is trainable."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    store = ParamStore()
    for name, arr in parse_checkpoint(blob, str(path)).items():
        store.add(name, Tensor(arr, dtype=arr.dtype))
    return store
