"""Mask-guided spatial attention for fine-grained classification, in plain numpy."""

from .attention import FusionParams, attention_loss, attention_map, fuse_attention, resize_mask
from .backbone import Backbone, BackboneConfig, build_backbone
from .head import BlendWeights, LossWeights, apply_attention, blend, classify, total_loss
from .model import VARIANTS, MGANet
from .synth import Sample, SynthSpec, augment, generate
from .tensor import Tensor, backward
from .train import TrainConfig, ablate, evaluate, train

__all__ = [
    "Backbone", "BackboneConfig", "BlendWeights", "FusionParams", "LossWeights", "MGANet", "Sample",
    "SynthSpec", "Tensor", "TrainConfig", "VARIANTS", "ablate", "apply_attention", "attention_loss",
    "attention_map", "augment", "backward", "blend", "build_backbone", "classify", "evaluate",
    "fuse_attention", "generate", "resize_mask", "total_loss", "train",
]
