"""SGD with momentum, cosine-annealed learning rate, evaluation and ablation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .attention import attention_loss, resize_mask
from .backbone import BackboneConfig
from .head import BlendWeights, LossWeights, total_loss
from .model import VARIANTS, MGANet
from .synth import Sample, augment

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    variant: str = "mga"
    epochs: int = 20
    batch_size: int = 8
    lr0: float = 0.05
    momentum: float = 0.9
    tau: float = 0.1
    lambda_mu: BlendWeights = field(default_factory=BlendWeights)
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant != "mga" and self.tau != 0.0:
            raise ValueError(
                f"variant {self.variant!r} trains without mask supervision, so tau must be 0 (got {self.tau}); "
                "use --variant mga for a nonzero tau"
            )
        if self.variant == "mga" and not self.tau > 0.0:
            raise ValueError("variant 'mga' needs tau > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr0 < 0 or not 0.0 <= self.momentum < 1.0:
            raise ValueError("need lr0 >= 0 and 0 <= momentum < 1")

    @classmethod
    def for_variant(cls, variant: str, tau: float = 0.1, **kw) -> "TrainConfig":
        """Config with tau forced to 0 for the unsupervised variants."""
        return cls(variant=variant, tau=tau if variant == "mga" else 0.0, **kw)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_ce: float
    loss_att: float
    train_acc: float
    test_acc: float

    CSV_FIELDS = ("epoch", "lr", "loss_ce", "loss_att", "train_acc", "test_acc")

    def row(self) -> List[str]:
        return [str(self.epoch)] + [repr(float(getattr(self, k))) for k in self.CSV_FIELDS[1:]]


def sgd_step(params: Sequence, grads: Sequence, velocity: Sequence[np.ndarray], lr: float, momentum: float) -> None:
    """Classic momentum in place: ``v = m*v + g; p = p - lr*v``.

    ``params`` may be tensors or arrays; a ``None`` gradient counts as zero.
    """
    if not len(params) == len(grads) == len(velocity):
        raise ValueError(f"sgd_step: {len(params)} params, {len(grads)} grads, {len(velocity)} velocities")
    for p, g, v in zip(params, grads, velocity):
        data = p.data if isinstance(p, T.Tensor) else p
        if data.shape != v.shape or (g is not None and np.shape(g) != v.shape):
            raise ValueError("sgd_step: parameter, gradient and velocity shapes differ")
        v *= momentum
        if g is not None:
            v += g
        data -= lr * v


def lr_schedule(lr0: float, t: int, total: int) -> float:
    """Cosine annealing from ``lr0`` at ``t = 0`` toward 0 at ``t = total``."""
    if not 0 <= t < total:
        raise ValueError(f"epoch {t} outside [0, {total})")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


def _targets(samples: Sequence[Sample], fh: int, fw: int) -> np.ndarray:
    return np.stack([resize_mask(s.mask, fh, fw) for s in samples])


def evaluate(model: MGANet, test_set: Sequence[Sample], batch_size: int = 64) -> float:
    """Fraction of samples whose argmax logit equals the label. Masks are never read."""
    if not test_set:
        raise ValueError("evaluate: empty sample set")
    images = np.stack([s.image for s in test_set])
    labels = np.array([s.label for s in test_set])
    return float(np.mean(model.predict(images, batch_size) == labels))


def train(
    model: MGANet,
    train_set: Sequence[Sample],
    test_set: Optional[Sequence[Sample]],
    cfg: TrainConfig,
    track_accuracy: bool = True,
) -> List[EpochRecord]:
    """Run ``cfg.epochs`` epochs and return one record per epoch.

    Deterministic for a fixed ``cfg.seed``: shuffling and augmentation draw
    from per-epoch, per-sample streams derived from it. With
    ``track_accuracy=False`` the per-epoch accuracy passes are skipped and
    recorded as NaN.
    """
    if not train_set:
        raise ValueError("train: empty training set")
    if model.variant != cfg.variant:
        raise ValueError(f"model variant {model.variant!r} does not match config variant {cfg.variant!r}")
    if cfg.variant == "mga":
        for s in train_set:
            if s.mask is None:
                raise ValueError(f"variant 'mga' needs masks, but training sample {s.name or '?'} has none")
    has_masks = all(s.mask is not None for s in train_set)
    model.weights = cfg.lambda_mu
    weights = LossWeights(cfg.tau)
    params = model.trainable_parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    _, fh, fw = model.feature_shape(*train_set[0].image.shape[1:])
    records = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(cfg.lr0, epoch, cfg.epochs)
        order = np.random.default_rng([cfg.seed, epoch, 0]).permutation(len(train_set))
        ce_sum = att_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = [train_set[i] for i in idx]
            if cfg.augment:
                batch = [
                    augment(s, np.random.default_rng([cfg.seed, epoch, 1, int(i)]), require_mask=False)
                    for s, i in zip(batch, idx)
                ]
            images = np.stack([s.image for s in batch])
            labels = np.array([s.label for s in batch])
            out = model(images, training=True)
            l_att = None
            if out.attention is not None and has_masks:
                l_att = attention_loss(_targets(batch, fh, fw), out.attention)
            loss = total_loss(out.logits, labels, l_att, weights)
            for p in params:
                p.grad = None
            loss.backward()
            sgd_step(params, [p.grad for p in params], velocity, lr, cfg.momentum)
            ce_sum += T.softmax_cross_entropy(T.Tensor(out.logits.data), labels).item() * len(batch)
            att_sum += (l_att.item() if l_att is not None else math.nan) * len(batch)
        if not all(np.isfinite(p.data).all() for p in params):
            raise FloatingPointError(f"non-finite parameters after epoch {epoch + 1}; try a smaller learning rate")
        rec = EpochRecord(
            epoch=epoch + 1,
            lr=lr,
            loss_ce=ce_sum / len(train_set),
            loss_att=att_sum / len(train_set),
            train_acc=evaluate(model, train_set) if track_accuracy else math.nan,
            test_acc=evaluate(model, test_set) if test_set and track_accuracy else math.nan,
        )
        logger.info(
            "epoch %d lr %.5f ce %.4f att %.4f train %.3f test %.3f",
            rec.epoch, rec.lr, rec.loss_ce, rec.loss_att, rec.train_acc, rec.test_acc,
        )
        records.append(rec)
    return records


def write_records(path, records: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EpochRecord.CSV_FIELDS)
        for r in records:
            w.writerow(r.row())


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------


@dataclass
class AblationResult:
    seeds: List[int]
    accuracy: Dict[str, List[float]]  # variant -> per-seed test accuracy
    models: Dict[tuple, MGANet] = field(default_factory=dict, repr=False)

    def median(self, variant: str) -> float:
        return float(np.median(self.accuracy[variant]))

    def table(self) -> str:
        head = ["variant"] + [f"seed {s}" for s in self.seeds] + ["median"]
        rows = [
            [v] + [f"{100 * a:.2f}" for a in self.accuracy[v]] + [f"{100 * self.median(v):.2f}"] for v in VARIANTS
        ]
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths))  # noqa: E731
        lines = ["Test accuracy (%)", fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant"] + [f"seed_{s}" for s in self.seeds] + ["median"])
            for v in VARIANTS:
                w.writerow([v] + [repr(a) for a in self.accuracy[v]] + [repr(self.median(v))])


def ablate(
    train_set: Sequence[Sample],
    test_set: Sequence[Sample],
    base_cfg: TrainConfig,
    backbone_cfg: BackboneConfig = None,
    seeds: Sequence[int] = (0,),
    num_classes: Optional[int] = None,
    keep_models: bool = False,
) -> AblationResult:
    """Train baseline, attention and mga from the same initial weights per seed."""
    backbone_cfg = backbone_cfg or BackboneConfig()
    num_classes = num_classes or 1 + max(s.label for s in list(train_set) + list(test_set))
    acc: Dict[str, List[float]] = {v: [] for v in VARIANTS}
    models = {}
    tau = base_cfg.tau if base_cfg.tau > 0 else 0.1
    for seed in seeds:
        for variant in VARIANTS:
            cfg = TrainConfig.for_variant(
                variant,
                tau=tau,
                epochs=base_cfg.epochs,
                batch_size=base_cfg.batch_size,
                lr0=base_cfg.lr0,
                momentum=base_cfg.momentum,
                lambda_mu=base_cfg.lambda_mu,
                seed=seed,
                augment=base_cfg.augment,
            )
            model = MGANet.build(backbone_cfg, num_classes, variant, cfg.lambda_mu, seed=seed)
            train(model, train_set, None, cfg, track_accuracy=False)
            acc[variant].append(evaluate(model, test_set))
            logger.info("ablation seed %d %s: test accuracy %.4f", seed, variant, acc[variant][-1])
            if keep_models:
                models[(seed, variant)] = model
    return AblationResult(list(seeds), acc, models)


def save_ablation(result: AblationResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / "ablation.csv")
    (out / "ablation.txt").write_text(result.table())
