"""Binary PGM (P5) and PPM (P6) reading and writing."""

from __future__ import annotations

from pathlib import Path
from typing import Tuple, Union

import numpy as np

PathLike = Union[str, Path]


def _tokens(buf: bytes, count: int) -> Tuple[list, int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out = []
    i = 0
    n = len(buf)
    while len(out) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i : i + 1].isspace() and buf[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise ValueError("truncated PNM header")
        out.append(buf[start:i])
    # exactly one whitespace byte separates the header from the raster
    return out, i + 1


def read_pnm(path: PathLike) -> Tuple[np.ndarray, int]:
    """Return the ``H x W`` (P5) or ``H x W x 3`` (P6) integer raster and its maxval."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    try:
        (magic, w, h, maxval), offset = _tokens(buf, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PNM header") from exc
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM type {magic!r}; only binary P5/P6 are read")
    if not 0 < maxval < 65536 or w < 1 or h < 1:
        raise ValueError(f"{path}: invalid PNM dimensions or maxval")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    raster = buf[offset : offset + count * dtype.itemsize]
    if len(raster) != count * dtype.itemsize:
        raise ValueError(f"{path}: truncated raster")
    arr = np.frombuffer(raster, dtype=dtype).astype(np.int64)
    return (arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)), maxval


def read_image(path: PathLike) -> np.ndarray:
    """PPM (or grey PGM) as a ``3 x H x W`` float array in [0, 1]."""
    raw, maxval = read_pnm(path)
    img = raw / float(maxval)
    if img.ndim == 2:
        img = np.repeat(img[None], 3, axis=0)
    else:
        img = img.transpose(2, 0, 1)
    return img


def read_mask(path: PathLike) -> np.ndarray:
    """PGM mask as a binary ``H x W`` float array; any nonzero level is foreground."""
    raw, _ = read_pnm(path)
    if raw.ndim == 3:
        raw = raw.max(axis=2)
    return (raw > 0).astype(np.float64)


def write_pgm(path: PathLike, arr: np.ndarray) -> None:
    """Write an ``H x W`` uint8-range array as binary PGM."""
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ValueError(f"PGM data must be 2-D, got shape {a.shape}")
    a = np.clip(a, 0, 255).astype(np.uint8)
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (a.shape[1], a.shape[0]) + a.tobytes())


def write_ppm(path: PathLike, arr: np.ndarray) -> None:
    """Write an ``H x W x 3`` uint8-range array as binary PPM."""
    a = np.asarray(arr)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"PPM data must be H x W x 3, got shape {a.shape}")
    a = np.clip(a, 0, 255).astype(np.uint8)
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (a.shape[1], a.shape[0]) + a.tobytes())


def to_uint8(x: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 0..255 with round-half-to-even."""
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
