"""Tiny models and datasets shared by the training-level tests."""

from mgattn.backbone import BackboneConfig
from mgattn.model import MGANet
from mgattn.synth import SynthSpec, generate

TINY_BACKBONE = BackboneConfig(stage_channels=[4, 6, 8], blocks_per_stage=1)


def tiny_data(num_classes=2, per_class=4, size=16, seed=0):
    spec = SynthSpec(num_classes=num_classes, samples_per_class=per_class, image_size=size, rng_seed=seed)
    return generate(spec)


def tiny_model(variant="mga", num_classes=2, seed=0, cfg=TINY_BACKBONE):
    return MGANet.build(cfg, num_classes, variant, seed=seed)
