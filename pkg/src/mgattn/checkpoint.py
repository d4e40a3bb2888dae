"""Binary tensor records.

Each record is the magic ``b"MGAT1"``, a little-endian u32 rank, ``rank`` u32
dimensions, then the row-major float64 payload in little-endian order. A
checkpoint file is a plain concatenation of records.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO, Iterable, List, Union

import numpy as np

MAGIC = b"MGAT1"


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    fh.write(MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f8", order="C").tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise ValueError(f"bad tensor record: expected magic {MAGIC!r}, got {magic!r}")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    count = int(np.prod(dims)) if rank else 1
    payload = _read_exact(fh, 8 * count)
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated tensor record: wanted {n} bytes, got {len(buf)}")
    return buf


def save_tensors(path: Union[str, Path], arrays: Iterable[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        for a in arrays:
            write_tensor(fh, a)


def load_tensors(path: Union[str, Path]) -> List[np.ndarray]:
    out = []
    with open(path, "rb") as fh:
        while fh.peek(1) if hasattr(fh, "peek") else False:
            out.append(read_tensor(fh))
    return out
