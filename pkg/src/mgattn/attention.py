"""Mask-guided spatial attention.

The attention map is a sigmoid over a learned 1x1 fusion of the channel-mean
and channel-max maps of the backbone features. During training it is pulled
toward the segmentation mask after that mask has been average-pooled to the
feature resolution and rescaled so its peak is 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import tensor as T
from .tensor import Tensor

EMPTY_MASK_EPS = 1e-12


def mean_attention(f_img: Tensor) -> Tensor:
    """Per-pixel mean over channels."""
    return T.channel_mean(f_img)


def max_attention(f_img: Tensor) -> Tensor:
    """Per-pixel max over channels; ties go to the lowest channel index."""
    return T.channel_max(f_img)


@dataclass
class FusionParams:
    weight: Tensor  # 1 x 2 x 1 x 1, input order (mean map, max map)
    bias: Tensor  # 1

    def __post_init__(self):
        if self.weight.shape != (1, 2, 1, 1) or self.bias.shape != (1,):
            raise ValueError(f"fusion params must be 1x2x1x1 and 1, got {self.weight.shape} and {self.bias.shape}")

    @classmethod
    def create(cls, w_mean: float, w_max: float, bias: float, requires_grad: bool = True) -> "FusionParams":
        return cls(
            Tensor(np.array([w_mean, w_max]).reshape(1, 2, 1, 1), requires_grad=requires_grad),
            Tensor([bias], requires_grad=requires_grad),
        )

    @classmethod
    def init(cls, rng: np.random.Generator) -> "FusionParams":
        bound = 1.0 / np.sqrt(2.0)
        w = rng.uniform(-bound, bound, 2)
        return cls.create(w[0], w[1], rng.uniform(-bound, bound))

    def as_dict(self) -> Dict[str, Tensor]:
        return {"mga.fuse.weight": self.weight, "mga.fuse.bias": self.bias}


def fuse_attention(am_mn: Tensor, am_max: Tensor, params: FusionParams) -> Tensor:
    """Stack (mean, max) as two channels, 1x1 conv to one channel, sigmoid.

    Accepts ``H x W`` maps or ``N x H x W`` batches and returns the same shape.
    """
    if am_mn.shape != am_max.shape:
        raise ValueError(f"fuse_attention: map shapes differ, {am_mn.shape} vs {am_max.shape}")
    if am_mn.ndim not in (2, 3):
        raise ValueError(f"fuse_attention: expected H x W or N x H x W maps, got {am_mn.shape}")
    axis = am_mn.ndim - 2
    stacked = T.stack([am_mn, am_max], axis=axis)
    fused = T.conv2d(stacked, params.weight, params.bias)
    fused = T.reshape(fused, am_mn.shape)
    return T.sigmoid(fused)


def attention_map(f_img: Tensor, params: FusionParams) -> Tensor:
    return fuse_attention(mean_attention(f_img), max_attention(f_img), params)


def resize_mask(mask, target_h: int, target_w: int) -> np.ndarray:
    """Average-pool a ``H_in x W_in`` mask to the target size and peak-normalise.

    Values must already lie in [0, 1]; multi-level masks are binarised when
    they are read from disk. An empty pooled mask stays all zeros.
    """
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"resize_mask: expected a 2-D mask, got shape {m.shape}")
    h, w = m.shape
    if target_h < 1 or target_w < 1 or h % target_h or w % target_w:
        raise ValueError(
            f"resize_mask: mask size {h}x{w} must be an integer multiple of the target {target_h}x{target_w}"
        )
    if np.any(m < 0) or np.any(m > 1):
        raise ValueError("resize_mask: mask values must lie in [0, 1]")
    kh, kw = h // target_h, w // target_w
    pooled = m.reshape(target_h, kh, target_w, kw).mean(axis=(1, 3))
    peak = pooled.max()
    if peak < EMPTY_MASK_EPS:
        return np.zeros((target_h, target_w))
    return pooled / peak


def attention_loss(m, am: Tensor) -> Tensor:
    """Mean squared difference between mask target and attention map.

    For ``N x H x W`` batches this is the mean over samples of the per-sample
    losses, which equals the mean over all elements.
    """
    m = m if isinstance(m, Tensor) else Tensor(m)
    if m.shape != am.shape:
        raise ValueError(f"attention_loss: target {m.shape} and attention map {am.shape} differ")
    return T.mse(m, am)
