"""Compact plain CNN that produces the feature map the attention module reads."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class BackboneConfig:
    in_channels: int = 3
    stage_channels: List[int] = field(default_factory=lambda: [16, 32, 64])
    blocks_per_stage: int = 2
    frozen_stages: int = 0
    batch_norm: bool = True

    def __post_init__(self):
        self.stage_channels = [int(c) for c in self.stage_channels]
        if not self.stage_channels:
            raise ValueError("stage_channels must list at least one stage")
        if any(c < 1 for c in self.stage_channels) or self.in_channels < 1:
            raise ValueError(f"channel counts must be positive, got {self.stage_channels}")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")
        if not 0 <= self.frozen_stages <= len(self.stage_channels):
            raise ValueError(
                f"frozen_stages must lie in [0, {len(self.stage_channels)}], got {self.frozen_stages}"
            )

    @property
    def out_channels(self) -> int:
        return self.stage_channels[-1]

    @property
    def reduction(self) -> int:
        return 2 ** len(self.stage_channels)


class Backbone:
    """Stages of ``blocks_per_stage x (3x3 conv -> [batch norm] -> relu)`` then 2x2 average pooling.

    Batch-norm running statistics live in ``buffers``. Frozen stages always
    normalise with their running statistics and never update them.
    """

    def __init__(self, cfg: BackboneConfig, params: Dict[str, Tensor], buffers: Dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.buffers = buffers

    def stage_names(self, s: int) -> List[str]:
        names = []
        for b in range(self.cfg.blocks_per_stage):
            names += [f"backbone.stage{s + 1}.conv{b + 1}.weight", f"backbone.stage{s + 1}.conv{b + 1}.bias"]
            if self.cfg.batch_norm:
                names += [f"backbone.stage{s + 1}.bn{b + 1}.weight", f"backbone.stage{s + 1}.bn{b + 1}.bias"]
        return names

    def forward(self, image: Tensor, training: bool = False) -> Tensor:
        h, w = image.shape[-2:]
        r = self.cfg.reduction
        if h % r or w % r:
            raise ValueError(
                f"input size {h}x{w} must be divisible by {r} (2^{len(self.cfg.stage_channels)} stages); "
                f"e.g. use {max(r, h - h % r)}x{max(r, w - w % r)}"
            )
        x = image
        for s in range(len(self.cfg.stage_channels)):
            for b in range(self.cfg.blocks_per_stage):
                prefix = f"backbone.stage{s + 1}.conv{b + 1}"
                x = T.conv2d(x, self.params[prefix + ".weight"], self.params[prefix + ".bias"], padding=1)
                if self.cfg.batch_norm:
                    bn = f"backbone.stage{s + 1}.bn{b + 1}"
                    x = T.batch_norm(
                        x,
                        self.params[bn + ".weight"],
                        self.params[bn + ".bias"],
                        self.buffers[bn + ".running_mean"],
                        self.buffers[bn + ".running_var"],
                        training=training and s >= self.cfg.frozen_stages,
                    )
                x = T.relu(x)
            x = T.avg_pool2d(x, 2)
        return x

    __call__ = forward

    def trainable_parameters(self) -> List[Tensor]:
        frozen = {n for s in range(self.cfg.frozen_stages) for n in self.stage_names(s)}
        return [p for n, p in self.params.items() if n not in frozen and p.requires_grad]

    def output_shape(self, in_h: int, in_w: int) -> Tuple[int, int, int]:
        r = self.cfg.reduction
        return self.cfg.out_channels, in_h // r, in_w // r


def build_backbone(cfg: BackboneConfig, rng_seed: int) -> Backbone:
    """He-initialised backbone; identical seeds give identical weights."""
    rng = np.random.default_rng(rng_seed)
    params: Dict[str, Tensor] = {}
    buffers: Dict[str, np.ndarray] = {}
    c_in = cfg.in_channels
    for s, c_out in enumerate(cfg.stage_channels):
        trainable = s >= cfg.frozen_stages
        for b in range(cfg.blocks_per_stage):
            prefix = f"backbone.stage{s + 1}.conv{b + 1}"
            std = np.sqrt(2.0 / (c_in * 9))
            params[prefix + ".weight"] = Tensor(rng.normal(0.0, std, (c_out, c_in, 3, 3)), requires_grad=trainable)
            # batch norm cancels a conv bias exactly, so it stays a fixed zero there
            params[prefix + ".bias"] = Tensor(np.zeros(c_out), requires_grad=trainable and not cfg.batch_norm)
            if cfg.batch_norm:
                bn = f"backbone.stage{s + 1}.bn{b + 1}"
                params[bn + ".weight"] = Tensor(np.ones(c_out), requires_grad=trainable)
                params[bn + ".bias"] = Tensor(np.zeros(c_out), requires_grad=trainable)
                buffers[bn + ".running_mean"] = np.zeros(c_out)
                buffers[bn + ".running_var"] = np.ones(c_out)
            c_in = c_out
    return Backbone(cfg, params, buffers)


def trainable_parameters(backbone: Backbone) -> List[Tensor]:
    return backbone.trainable_parameters()
