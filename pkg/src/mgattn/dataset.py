"""On-disk dataset layout: ``<root>/<class>/<sample>.ppm`` plus ``<sample>.mask.pgm``."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import pnm
from .synth import Sample

MASK_SUFFIX = ".mask.pgm"


def parse_ratio(ratio: Union[str, Sequence[float]]) -> Tuple[float, float]:
    if isinstance(ratio, str):
        parts = ratio.split(":")
        if len(parts) != 2:
            raise ValueError(f"split ratio must look like '2:1', got {ratio!r}")
        ratio = parts
    a, b = (float(x) for x in ratio)
    if a <= 0 or b <= 0:
        raise ValueError(f"split ratio parts must be positive, got {a}:{b}")
    return a, b


def split_counts(n: int, ratio) -> Tuple[int, int]:
    a, b = parse_ratio(ratio)
    n_train = int(np.floor(n * a / (a + b) + 0.5))
    n_train = min(max(n_train, 1), n)
    return n_train, n - n_train


def resize_nearest(a: np.ndarray, h: int, w: int) -> np.ndarray:
    ih, iw = a.shape[-2:]
    rows = np.minimum((np.arange(h) + 0.5) * ih / h, ih - 1).astype(int)
    cols = np.minimum((np.arange(w) + 0.5) * iw / w, iw - 1).astype(int)
    return a[..., rows[:, None], cols[None, :]]


def resize_bilinear(a: np.ndarray, h: int, w: int) -> np.ndarray:
    ih, iw = a.shape[-2:]
    if (ih, iw) == (h, w):
        return a.copy()
    y = np.clip((np.arange(h) + 0.5) * ih / h - 0.5, 0, ih - 1)
    x = np.clip((np.arange(w) + 0.5) * iw / w - 0.5, 0, iw - 1)
    y0, x0 = np.floor(y).astype(int), np.floor(x).astype(int)
    y1, x1 = np.minimum(y0 + 1, ih - 1), np.minimum(x0 + 1, iw - 1)
    wy, wx = (y - y0)[:, None], (x - x0)[None, :]
    top = a[..., y0[:, None], x0[None, :]] * (1 - wx) + a[..., y0[:, None], x1[None, :]] * wx
    bot = a[..., y1[:, None], x0[None, :]] * (1 - wx) + a[..., y1[:, None], x1[None, :]] * wx
    return top * (1 - wy) + bot * wy


def class_dirs(root: Path) -> List[Path]:
    return sorted(p for p in root.iterdir() if p.is_dir())


def load_dataset(
    dir_path,
    split_ratio="2:1",
    size: Optional[int] = None,
    seed: int = 0,
    require_masks: bool = True,
) -> Tuple[List[Sample], List[Sample]]:
    """Read a class-per-folder dataset and split every class by ``split_ratio``.

    Class labels follow the sorted folder names. Within a class the split
    uses a permutation seeded by ``(seed, class index)`` over sorted file
    names, so it does not depend on directory listing order or on which mask
    files happen to exist. Masks are optional for test samples.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise ValueError(f"dataset directory {root} does not exist")
    classes = class_dirs(root)
    train: List[Sample] = []
    test: List[Sample] = []
    for label, cdir in enumerate(classes):
        images = sorted(p for p in cdir.glob("*.ppm"))
        if not images:
            continue
        n_train, _ = split_counts(len(images), split_ratio)
        order = np.random.default_rng([seed, label]).permutation(len(images))
        for rank, idx in enumerate(order):
            path = images[idx]
            is_train = rank < n_train
            s = _load_sample(path, label, size, need_mask=is_train and require_masks)
            (train if is_train else test).append(s)
    if not train and not test:
        raise ValueError(f"no .ppm images found under {root}")
    return train, test


def _load_sample(path: Path, label: int, size: Optional[int], need_mask: bool) -> Sample:
    image = pnm.read_image(path)
    mask_path = path.with_name(path.name[: -len(".ppm")] + MASK_SUFFIX)
    mask = None
    if mask_path.exists():
        mask = pnm.read_mask(mask_path)
        if mask.shape != image.shape[1:]:
            raise ValueError(f"{mask_path}: mask size {mask.shape} differs from image {image.shape[1:]}")
    elif need_mask:
        raise ValueError(f"training image {path} has no mask file {mask_path.name}")
    if size is not None and image.shape[1:] != (size, size):
        image = resize_bilinear(image, size, size)
        if mask is not None:
            mask = resize_nearest(mask, size, size)
    return Sample(image, label, mask, f"{path.parent.name}/{path.name[: -len('.ppm')]}")


def write_dataset(samples: Sequence[Sample], root, class_names: Optional[Sequence[str]] = None) -> int:
    """Write samples in the on-disk layout; returns the number of images written."""
    root = Path(root)
    n_classes = max(s.label for s in samples) + 1
    names = list(class_names) if class_names else [f"class_{k:03d}" for k in range(n_classes)]
    for s in samples:
        cdir = root / names[s.label]
        cdir.mkdir(parents=True, exist_ok=True)
        stem = s.name or "sample"
        pnm.write_ppm(cdir / f"{stem}.ppm", pnm.to_uint8(s.image.transpose(1, 2, 0)))
        if s.mask is not None:
            pnm.write_pgm(cdir / f"{stem}{MASK_SUFFIX}", np.where(s.mask > 0, 255, 0))
    return len(samples)
