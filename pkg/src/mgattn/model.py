"""The full classifier: backbone, optional attention branch, blended head."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import checkpoint
from .attention import FusionParams, attention_map
from .backbone import Backbone, BackboneConfig, build_backbone
from .head import BlendWeights, HeadParams, apply_attention, blend, classify
from .tensor import Tensor

VARIANTS = ("baseline", "attention", "mga")


@dataclass
class Output:
    logits: Tensor
    attention: Optional[Tensor]
    features: Tensor


class MGANet:
    """Backbone -> (attention map, attended features, blend) -> pool + FC.

    ``variant="baseline"`` skips the attention branch entirely so the head
    sees the raw backbone features.
    """

    def __init__(
        self,
        backbone: Backbone,
        fusion: FusionParams,
        head: HeadParams,
        variant: str = "mga",
        weights: BlendWeights = BlendWeights(),
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if head.weight.shape[1] != backbone.cfg.out_channels:
            raise ValueError("head input size does not match the backbone's output channels")
        self.backbone = backbone
        self.fusion = fusion
        self.head = head
        self.variant = variant
        self.weights = weights

    @classmethod
    def build(
        cls,
        cfg: BackboneConfig,
        num_classes: int,
        variant: str = "mga",
        weights: BlendWeights = BlendWeights(),
        seed: int = 0,
    ) -> "MGANet":
        # Separate streams per component so all variants share the same init.
        s_backbone, s_fusion, s_head = np.random.SeedSequence(seed).spawn(3)
        backbone = build_backbone(cfg, int(s_backbone.generate_state(1)[0]))
        fusion = FusionParams.init(np.random.default_rng(s_fusion))
        head = HeadParams.init(np.random.default_rng(s_head), cfg.out_channels, num_classes)
        return cls(backbone, fusion, head, variant, weights)

    @property
    def num_classes(self) -> int:
        return self.head.num_classes

    @property
    def uses_attention(self) -> bool:
        return self.variant != "baseline"

    def named_parameters(self) -> Dict[str, Tensor]:
        params = dict(self.backbone.params)
        params.update(self.fusion.as_dict())
        params.update(self.head.as_dict())
        return params

    def trainable_parameters(self) -> List[Tensor]:
        params = list(self.backbone.trainable_parameters())
        if self.uses_attention:
            params += [self.fusion.weight, self.fusion.bias]
        return params + [self.head.weight, self.head.bias]

    def forward(self, images: Union[np.ndarray, Tensor], training: bool = False) -> Output:
        x = images if isinstance(images, Tensor) else Tensor(images)
        f_img = self.backbone(x, training=training)
        if not self.uses_attention:
            return Output(classify(f_img, self.head), None, f_img)
        am = attention_map(f_img, self.fusion)
        f_final = blend(f_img, apply_attention(f_img, am), self.weights)
        return Output(classify(f_final, self.head), am, f_img)

    __call__ = forward

    def predict(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Argmax class per image; ties resolve to the lower class index."""
        preds = []
        for i in range(0, len(images), batch_size):
            logits = self.forward(images[i : i + batch_size]).logits.data
            preds.append(np.argmax(logits, axis=-1))
        return np.concatenate(preds)

    def feature_shape(self, in_h: int, in_w: int) -> Tuple[int, int, int]:
        return self.backbone.output_shape(in_h, in_w)

    # -- persistence -------------------------------------------------------

    def manifest(self) -> str:
        cfg = self.backbone.cfg
        lines = [
            f"format={checkpoint.MAGIC.decode()}",
            f"variant={self.variant}",
            f"num_classes={self.num_classes}",
            f"lambda={self.weights.lam!r}",
            f"mu={self.weights.mu!r}",
            f"in_channels={cfg.in_channels}",
            f"stage_channels={','.join(map(str, cfg.stage_channels))}",
            f"blocks_per_stage={cfg.blocks_per_stage}",
            f"frozen_stages={cfg.frozen_stages}",
            f"batch_norm={int(cfg.batch_norm)}",
        ]
        for name, p in self.named_parameters().items():
            lines.append(f"param {name} {','.join(map(str, p.shape))}")
        for name, b in self.backbone.buffers.items():
            lines.append(f"buffer {name} {','.join(map(str, b.shape))}")
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        """Write ``path`` (tensor records) and ``path.manifest`` (text)."""
        path = Path(path)
        arrays = [p.data for p in self.named_parameters().values()] + list(self.backbone.buffers.values())
        checkpoint.save_tensors(path, arrays)
        Path(str(path) + ".manifest").write_text(self.manifest())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MGANet":
        path = Path(path)
        meta, shapes = _parse_manifest(Path(str(path) + ".manifest").read_text())
        cfg = BackboneConfig(
            in_channels=int(meta["in_channels"]),
            stage_channels=[int(c) for c in meta["stage_channels"].split(",")],
            blocks_per_stage=int(meta["blocks_per_stage"]),
            frozen_stages=int(meta["frozen_stages"]),
            batch_norm=bool(int(meta.get("batch_norm", "0"))),
        )
        lam = float(meta["lambda"])
        weights = BlendWeights(lam, float(meta["mu"])) if "mu" in meta else BlendWeights.from_lambda(lam)
        model = cls.build(cfg, int(meta["num_classes"]), meta["variant"], weights)
        arrays = checkpoint.load_tensors(path)
        slots = {n: p.data for n, p in model.named_parameters().items()}
        slots.update(model.backbone.buffers)
        if list(shapes) != list(slots) or len(arrays) != len(slots):
            raise ValueError(f"checkpoint {path} does not match its manifest")
        for (name, dst), arr in zip(slots.items(), arrays):
            if arr.shape != dst.shape or tuple(shapes[name]) != dst.shape:
                raise ValueError(f"checkpoint {path}: {name} has shape {arr.shape}, expected {dst.shape}")
            dst[...] = arr
        return model


def _parse_manifest(text: str):
    meta: Dict[str, str] = {}
    shapes: Dict[str, Tuple[int, ...]] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith(("param ", "buffer ")):
            _, name, dims = line.split()
            shapes[name] = tuple(int(d) for d in dims.split(","))
        else:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta, shapes
