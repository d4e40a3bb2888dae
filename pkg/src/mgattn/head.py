"""Attention application, feature blending, classifier head and the joint loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor, backward_rule


@dataclass(frozen=True)
class BlendWeights:
    lam: float = 0.5
    mu: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0 and 0.0 <= self.mu <= 1.0):
            raise ValueError(f"blend weights must lie in [0, 1], got lambda={self.lam}, mu={self.mu}")
        if abs(self.lam + self.mu - 1.0) > 1e-12:
            raise ValueError(f"blend weights must sum to 1, got lambda={self.lam}, mu={self.mu}")

    @classmethod
    def from_lambda(cls, lam: float) -> "BlendWeights":
        return cls(lam, 1.0 - lam)


@dataclass(frozen=True)
class LossWeights:
    tau: float = 0.1

    def __post_init__(self):
        if not self.tau >= 0.0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")


def apply_attention(f_img: Tensor, am: Tensor) -> Tensor:
    """Multiply every channel of ``f_img`` by the spatial map ``am``."""
    if f_img.ndim not in (3, 4) or am.ndim != f_img.ndim - 1:
        raise ValueError(f"apply_attention: features {f_img.shape} and map {am.shape} are incompatible")
    if f_img.shape[-2:] != am.shape[-2:] or (f_img.ndim == 4 and f_img.shape[0] != am.shape[0]):
        raise ValueError(f"apply_attention: spatial shapes differ, {f_img.shape} vs {am.shape}")
    return Tensor._from_op(f_img.data * np.expand_dims(am.data, -3), (f_img, am), "apply_attention")


@backward_rule("apply_attention")
def _apply_attention_backward(node, g):
    f_img, am = node._parents
    a = np.expand_dims(am.data, -3)
    return g * a, (g * f_img.data).sum(axis=-3)


def blend(f_img: Tensor, f_att: Tensor, w: BlendWeights) -> Tensor:
    """``lam * f_img + mu * f_att``."""
    if f_img.shape != f_att.shape:
        raise ValueError(f"blend: shape mismatch {f_img.shape} vs {f_att.shape}")
    return T.add(T.scalar_mul(f_img, w.lam), T.scalar_mul(f_att, w.mu))


@dataclass
class HeadParams:
    weight: Tensor  # K x C
    bias: Tensor  # K

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, num_classes: int) -> "HeadParams":
        bound = 1.0 / np.sqrt(channels)
        return cls(
            Tensor(rng.uniform(-bound, bound, (num_classes, channels)), requires_grad=True),
            Tensor(np.zeros(num_classes), requires_grad=True),
        )

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    def as_dict(self) -> Dict[str, Tensor]:
        return {"head.fc.weight": self.weight, "head.fc.bias": self.bias}


def classify(f_final: Tensor, head: HeadParams, num_classes: Optional[int] = None) -> Tensor:
    """Global average pool then one fully connected layer."""
    if num_classes is not None and num_classes != head.num_classes:
        raise ValueError(f"classify: head has {head.num_classes} outputs, expected {num_classes}")
    pooled = T.global_avg_pool(f_final)
    if pooled.shape[-1] != head.weight.shape[1]:
        raise ValueError(f"classify: features have {pooled.shape[-1]} channels, head expects {head.weight.shape[1]}")
    return T.linear(pooled, head.weight, head.bias)


def total_loss(logits: Tensor, label, l_att: Optional[Tensor], w: LossWeights) -> Tensor:
    """Cross-entropy plus ``tau`` times the attention loss.

    With ``tau == 0`` (or no attention loss) the result is the cross-entropy
    tensor itself.
    """
    ce = T.softmax_cross_entropy(logits, label)
    if w.tau == 0.0 or l_att is None:
        return ce
    if l_att.data.min() < 0:
        raise ValueError("total_loss: attention loss must be nonnegative")
    return T.add(ce, T.scalar_mul(l_att, w.tau))
