"""Synthetic vein-patterned leaves with pixel-exact masks, plus joint augmentation.

Every class shares the same leaf layout; only the angle at which the
secondary veins leave the midrib changes from class to class
(``base + k * delta`` degrees), so neighbouring classes are nearly identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

LEAF_RGB = np.array([0.30, 0.58, 0.22])
VEIN_RGB = np.array([0.12, 0.30, 0.08])
PAPER_RGB = np.array([0.92, 0.91, 0.86])


@dataclass
class Sample:
    image: np.ndarray  # 3 x H x W in [0, 1]
    label: int
    mask: Optional[np.ndarray] = None  # H x W in {0, 1}
    name: str = ""


@dataclass
class SynthSpec:
    num_classes: int = 10
    samples_per_class: int = 20
    image_size: int = 64
    vein_branch_angle_base: float = 20.0
    inter_class_angle_delta: float = 7.0
    noise_std: float = 0.05
    rng_seed: int = 0
    branch_pairs: int = 4
    # short dark strokes scattered on the blade that are not veins
    distractors: int = 0
    # multiple of 2**stages the image size must respect
    size_multiple: int = 8

    def __post_init__(self):
        if self.num_classes < 1 or self.samples_per_class < 1:
            raise ValueError("num_classes and samples_per_class must be positive")
        if self.image_size < 16 or self.image_size % self.size_multiple:
            raise ValueError(f"image_size must be >= 16 and divisible by {self.size_multiple}, got {self.image_size}")
        if not self.inter_class_angle_delta > 0:
            raise ValueError("inter_class_angle_delta must be positive")
        lo = self.vein_branch_angle_base
        hi = lo + (self.num_classes - 1) * self.inter_class_angle_delta
        if not (0.0 < lo and hi < 90.0):
            raise ValueError(f"branch angles span [{lo}, {hi}] degrees; they must lie inside (0, 90)")
        if self.noise_std < 0 or self.branch_pairs < 1 or self.distractors < 0:
            raise ValueError("noise_std, branch_pairs and distractors must be nonnegative (branch_pairs >= 1)")

    def angle(self, k: int) -> float:
        return self.vein_branch_angle_base + k * self.inter_class_angle_delta


def _segment_distance(yy, xx, p0, p1):
    """Distance from each pixel centre to the segment p0-p1 (points as (y, x))."""
    d = np.subtract(p1, p0, dtype=float)
    length2 = float(d @ d)
    t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / max(length2, 1e-12)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))


def _stream(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def render(spec: SynthSpec, label: int, index: int) -> Sample:
    """Draw one sample; depends only on ``(spec, label, index)``."""
    s = spec.image_size
    # jitter is keyed by sample index alone, so sample i of every class shares
    # its leaf pose and differs from other classes only in branch angle
    jit = _stream(spec.rng_seed, 0, index)
    pix = _stream(spec.rng_seed, 1, label, index)

    yy, xx = np.mgrid[0:s, 0:s] + 0.5
    cy = s / 2 + jit.uniform(-s / 32, s / 32)
    cx = s / 2 + jit.uniform(-s / 32, s / 32)
    scale = jit.uniform(0.93, 1.05)
    semi_major, semi_minor = 0.44 * s * scale, 0.30 * s * scale
    blade = ((yy - cy) / semi_major) ** 2 + ((xx - cx) / semi_minor) ** 2 <= 1.0

    base = (cy + 0.92 * semi_major, cx)
    tip = (cy - 0.92 * semi_major, cx)
    main_w = max(1.0, s / 40)
    branch_w = max(0.6, s / 80)
    vein = _segment_distance(yy, xx, base, tip) <= main_w

    theta = np.deg2rad(spec.angle(label))
    fracs = np.linspace(0.22, 0.78, spec.branch_pairs) + jit.uniform(-0.03, 0.03, spec.branch_pairs)
    length = 0.55 * semi_minor / np.sin(theta) * jit.uniform(0.9, 1.1)
    for f in fracs:
        root = (base[0] - f * (base[0] - tip[0]), cx)
        for side in (-1.0, 1.0):
            end = (root[0] - length * np.cos(theta), root[1] + side * length * np.sin(theta))
            vein |= _segment_distance(yy, xx, root, end) <= branch_w
    vein &= blade

    # low-frequency shading across the blade
    shade = np.zeros((s, s))
    for _ in range(3):
        by, bx = jit.uniform(0, s, 2)
        shade += jit.uniform(-0.12, 0.12) * np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2 * (s / 5) ** 2))
    leaf = LEAF_RGB[:, None, None] * (1.0 + shade)
    img = np.where(blade, leaf, PAPER_RGB[:, None, None])
    if spec.distractors:
        clutter = np.zeros((s, s), dtype=bool)
        for _ in range(spec.distractors):
            p0 = (cy + pix.uniform(-0.7, 0.7) * semi_major, cx + pix.uniform(-0.7, 0.7) * semi_minor)
            phi = pix.uniform(0, np.pi)
            ln = pix.uniform(0.08, 0.18) * s
            p1 = (p0[0] + ln * np.cos(phi), p0[1] + ln * np.sin(phi))
            clutter |= _segment_distance(yy, xx, p0, p1) <= branch_w
        clutter &= blade & ~vein
        img = np.where(clutter, VEIN_RGB[:, None, None], img)
    img = np.where(vein, VEIN_RGB[:, None, None], img)
    if spec.noise_std > 0:
        img = img + pix.normal(0.0, spec.noise_std, img.shape)
    return Sample(np.clip(img, 0.0, 1.0), label, vein.astype(np.float64), f"s{index:03d}")


def generate(spec: SynthSpec) -> List[Sample]:
    """All samples, class-major order."""
    return [render(spec, k, i) for k in range(spec.num_classes) for i in range(spec.samples_per_class)]


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentDraw:
    """One random draw of the joint image/mask transform."""

    crop_y: int
    crop_x: int
    pad: int
    flip: bool
    erase: Optional[tuple] = None  # (y, x, h, w) in output coordinates


def draw_augment(rng: np.random.Generator, size: int, erase_p: float = 0.5, flip_p: float = 0.5) -> AugmentDraw:
    pad = size // 8
    cy, cx = (int(v) for v in rng.integers(0, 2 * pad + 1, 2))
    flip = bool(rng.random() < flip_p)
    erase = None
    if rng.random() < erase_p:
        area = size * size
        for _ in range(10):
            target = rng.uniform(0.02, 0.2) * area
            aspect = np.exp(rng.uniform(np.log(0.3), np.log(3.3)))
            h = int(round(np.sqrt(target * aspect)))
            w = int(round(np.sqrt(target / aspect)))
            if 0 < h < size and 0 < w < size:
                y = int(rng.integers(0, size - h + 1))
                x = int(rng.integers(0, size - w + 1))
                erase = (y, x, h, w)
                break
    return AugmentDraw(cy, cx, pad, flip, erase)


def _transform(a: np.ndarray, d: AugmentDraw) -> np.ndarray:
    h, w = a.shape[-2:]
    pad = [(0, 0)] * (a.ndim - 2) + [(d.pad, d.pad), (d.pad, d.pad)]
    out = np.pad(a, pad)[..., d.crop_y : d.crop_y + h, d.crop_x : d.crop_x + w]
    if d.flip:
        out = out[..., ::-1]
    out = out.copy()
    if d.erase is not None:
        y, x, eh, ew = d.erase
        out[..., y : y + eh, x : x + ew] = 0.0
    return out


def apply_augment(s: Sample, d: AugmentDraw) -> Sample:
    mask = None if s.mask is None else _transform(s.mask, d)
    return replace(s, image=_transform(s.image, d), mask=mask)


def augment(s: Sample, rng: np.random.Generator, require_mask: bool = True) -> Sample:
    """Random crop (after 12.5% zero padding), horizontal flip and erasing.

    The same draw is applied to the image and its mask; erased pixels are
    zeroed in both.
    """
    if require_mask and s.mask is None:
        raise ValueError(f"sample {s.name or '?'} has no mask; training-time augmentation needs one")
    return apply_augment(s, draw_augment(rng, s.image.shape[-1]))
