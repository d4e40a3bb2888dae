"""Flat ``key=value`` run configuration shared by the command-line tools."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .backbone import BackboneConfig
from .head import BlendWeights
from .synth import SynthSpec
from .train import TrainConfig


@dataclass
class RunConfig:
    # synthetic data
    classes: int = 10
    per_class: int = 20
    size: int = 64
    base_angle: float = 20.0
    delta: float = 7.0
    noise: float = 0.05
    distractors: int = 0
    # backbone
    stage_channels: str = "16,32,64"
    blocks_per_stage: int = 2
    frozen_stages: int = 0
    batch_norm: bool = True
    # training
    variant: str = "mga"
    epochs: int = 20
    batch: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    tau: Optional[float] = None  # None: 0.1 for mga, 0 otherwise
    lam: float = 0.5
    seed: int = 0
    augment: bool = True
    split: str = "2:1"
    seeds: int = 3
    resize: int = 0  # 0 keeps images at their stored size when loading
    # paths
    data: str = ""
    out: str = ""
    checkpoint: str = ""

    def effective_tau(self) -> float:
        if self.tau is None:
            return 0.1 if self.variant == "mga" else 0.0
        return self.tau

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            num_classes=self.classes,
            samples_per_class=self.per_class,
            image_size=self.size,
            vein_branch_angle_base=self.base_angle,
            inter_class_angle_delta=self.delta,
            noise_std=self.noise,
            rng_seed=self.seed,
            distractors=self.distractors,
            size_multiple=self.backbone_config().reduction,
        )

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            stage_channels=[int(c) for c in str(self.stage_channels).split(",") if c.strip()],
            blocks_per_stage=self.blocks_per_stage,
            frozen_stages=self.frozen_stages,
            batch_norm=self.batch_norm,
        )

    def train_config(self, variant: Optional[str] = None, seed: Optional[int] = None) -> TrainConfig:
        variant = variant or self.variant
        tau = self.effective_tau() if variant == self.variant else (0.1 if variant == "mga" else 0.0)
        return TrainConfig(
            variant=variant,
            epochs=self.epochs,
            batch_size=self.batch,
            lr0=self.lr,
            momentum=self.momentum,
            tau=tau,
            lambda_mu=BlendWeights.from_lambda(self.lam),
            seed=self.seed if seed is None else seed,
            augment=self.augment,
        )

    # -- text form ---------------------------------------------------------

    def dumps(self) -> str:
        """Effective settings as ``key=value`` lines.

        ``out`` is left out: the file is written into that directory, and
        leaving it out keeps reruns into another directory byte-identical.
        """
        lines = []
        for f in fields(self):
            if f.name == "out":
                continue
            v = getattr(self, f.name)
            if f.name == "tau":
                v = self.effective_tau()
            if isinstance(v, bool):
                v = int(v)
            lines.append(f"{f.name}={v!r}" if isinstance(v, float) else f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def update(self, values: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(key, types[key], raw))
        return self

    @classmethod
    def load(cls, path) -> "RunConfig":
        values = {}
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        return cls().update(values)


def _coerce(key: str, typ, raw):
    if not isinstance(raw, str):
        return raw
    typ = str(typ)
    try:
        if "bool" in typ:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "Optional[float]" in typ:
            return None if raw in ("", "None") else float(raw)
        if "float" in typ:
            return float(raw)
        if "int" in typ:
            return int(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r} as {typ}") from None
    return raw
