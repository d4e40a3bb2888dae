"""Command-line entry point: ``mgattn <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import pnm
from .attention import resize_mask
from .config import RunConfig
from .dataset import load_dataset, write_dataset
from .gradcheck import check_names, run_suite
from .model import VARIANTS, MGANet
from .synth import generate
from .train import ablate, evaluate, save_ablation, train, write_records

logger = logging.getLogger("mgattn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4
CHECKPOINT_NAME = "model.mgat"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="dataset directory (<class>/<sample>.ppm + .mask.pgm)")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--tau", type=float, help="attention-loss weight (mga only)")
    p.add_argument("--lambda", dest="lam", type=float, help="weight of the raw features in the blend")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--batch", type=int)
    p.add_argument("--split", help="train:test ratio, e.g. 2:1")
    p.add_argument("--frozen-stages", dest="frozen_stages", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--no-augment", dest="augment", action="store_const", const=False)
    p.add_argument("--resize", type=int, help="rescale loaded images to this square size")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mgattn", description="Mask-guided attention classifier tools")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic vein dataset")
    _add_common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--delta", type=float, help="branch-angle step between classes (degrees)")
    p.add_argument("--base-angle", dest="base_angle", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--distractors", type=int)

    p = sub.add_parser("train", help="train one variant")
    _add_common(p)

    p = sub.add_parser("eval", help="accuracy of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--on", choices=("train", "test"), default="test", help="which split to score")

    p = sub.add_parser("ablate", help="baseline / attention / mga comparison")
    _add_common(p)
    p.add_argument("--seeds", type=int, help="number of paired seeds")

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--op", action="append", choices=check_names(), help="check only this op (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("dump-attention", help="write attention maps and mask targets as PGM")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--on", choices=("train", "test"), default="test")
    p.add_argument("--limit", type=int, help="at most this many samples")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for key in (
        "out", "seed", "data", "variant", "tau", "lam", "epochs", "lr", "batch", "split", "frozen_stages",
        "momentum", "augment", "classes", "per_class", "size", "delta", "base_angle", "noise", "distractors",
        "seeds", "checkpoint", "resize",
    ):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    cfg.update(overrides)
    if cfg.variant != "mga" and cfg.tau not in (None, 0.0):
        raise UsageError(
            f"--tau {cfg.tau} is not allowed with --variant {cfg.variant}: only the mga variant uses mask "
            "supervision, so tau is fixed at 0 for baseline and attention"
        )
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise UsageError("--out is required")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _load(cfg: RunConfig, require_masks: bool):
    if not cfg.data:
        raise UsageError("--data is required")
    try:
        return load_dataset(cfg.data, cfg.split, size=cfg.resize or None, seed=cfg.seed, require_masks=require_masks)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def _load_model(cfg: RunConfig) -> MGANet:
    path = Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out or ".") / CHECKPOINT_NAME
    try:
        return MGANet.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc


def cmd_gen_data(cfg: RunConfig) -> int:
    if cfg.classes < 1 or cfg.per_class < 1:
        raise UsageError("--classes and --per-class must be positive")
    try:
        spec = cfg.synth_spec()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(cfg)
    samples = generate(spec)
    try:
        n = write_dataset(samples, out)
        (out / "config.txt").write_text(cfg.dumps())
    except OSError as exc:
        raise DataError(f"cannot write dataset to {out}: {exc}") from exc
    print(f"wrote {spec.num_classes} classes x {spec.samples_per_class} samples = {n} images and {n} masks to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    try:
        tcfg = cfg.train_config()
        bcfg = cfg.backbone_config()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    train_set, test_set = _load(cfg, require_masks=tcfg.variant == "mga")
    out = _out_dir(cfg)
    num_classes = 1 + max(s.label for s in train_set + test_set)
    model = MGANet.build(bcfg, num_classes, tcfg.variant, tcfg.lambda_mu, seed=tcfg.seed)
    try:
        records = train(model, train_set, test_set or None, tcfg)
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    model.save(out / CHECKPOINT_NAME)
    write_records(out / "epochs.csv", records)
    (out / "config.txt").write_text(cfg.dumps())
    last = records[-1]
    print(f"{tcfg.variant}: final train accuracy {last.train_acc:.2f}, test accuracy {last.test_acc:.2f}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, on: str) -> int:
    model = _load_model(cfg)
    train_set, test_set = _load(cfg, require_masks=False)
    samples = train_set if on == "train" else test_set
    if not samples:
        raise DataError(f"the {on} split is empty")
    try:
        acc = evaluate(model, samples)
    except ValueError as exc:
        raise DataError(f"checkpoint does not fit the data: {exc}") from exc
    print(f"{on} accuracy: {acc:.2f}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig) -> int:
    if cfg.seeds < 1:
        raise UsageError("--seeds must be positive")
    try:
        base = cfg.train_config(variant="mga")
        bcfg = cfg.backbone_config()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    train_set, test_set = _load(cfg, require_masks=True)
    if not test_set:
        raise DataError("ablation needs a nonempty test split")
    out = _out_dir(cfg)
    seeds = [cfg.seed + i for i in range(cfg.seeds)]
    result = ablate(train_set, test_set, base, bcfg, seeds, keep_models=True)
    for (seed, variant), model in result.models.items():
        model.save(out / f"seed{seed}_{variant}.mgat")
    save_ablation(result, out)
    (out / "config.txt").write_text(cfg.dumps())
    print(result.table(), end="")
    return EXIT_OK


def cmd_gradcheck(ops: Optional[List[str]], seed: int) -> int:
    results = run_suite(ops, seed=seed)
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err <= GRADCHECK_TOL else "FAIL"
        print(f"{name:<24s} max rel err {err:.3e}  {status}")
        worst = max(worst, err)
    if worst > GRADCHECK_TOL:
        print(f"gradient check failed: {worst:.3e} > {GRADCHECK_TOL:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def localization(att: np.ndarray, target: np.ndarray):
    """Mean attention over mask-foreground cells and over background cells."""
    fg = target > 0
    if fg.all() or not fg.any():
        return float("nan"), float("nan")
    return float(att[fg].mean()), float(att[~fg].mean())


def attention_maps(model: MGANet, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    if not model.uses_attention:
        raise UsageError("the baseline variant has no attention map")
    maps = [model(images[i : i + batch_size]).attention.data for i in range(0, len(images), batch_size)]
    return np.concatenate(maps)


def cmd_dump_attention(cfg: RunConfig, on: str, limit: Optional[int]) -> int:
    model = _load_model(cfg)
    train_set, test_set = _load(cfg, require_masks=False)
    samples = (train_set if on == "train" else test_set)[:limit]
    if not samples:
        raise DataError(f"the {on} split is empty")
    out = _out_dir(cfg)
    try:
        maps = attention_maps(model, np.stack([s.image for s in samples]))
    except ValueError as exc:
        raise DataError(f"checkpoint does not fit the data: {exc}") from exc
    h, w = maps.shape[1:]
    rows = []
    for s, am in zip(samples, maps):
        target = resize_mask(s.mask, h, w) if s.mask is not None else np.zeros((h, w))
        stem = s.name.replace("/", "_")
        pnm.write_pgm(out / f"{stem}.att.pgm", np.rint(255 * am))
        pnm.write_pgm(out / f"{stem}.target.pgm", np.rint(255 * target))
        fg, bg = localization(am, target) if s.mask is not None else (float("nan"), float("nan"))
        rows.append((s.name, fg, bg))
    with open(out / "attention_stats.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["sample", "fg_mean", "bg_mean"])
        wr.writerows([(n, repr(fg), repr(bg)) for n, fg, bg in rows])
    scored = [(fg, bg) for _, fg, bg in rows if np.isfinite(fg)]
    frac = np.mean([fg > bg for fg, bg in scored]) if scored else float("nan")
    print(f"wrote {2 * len(samples)} PGM files to {out}; foreground > background on {frac:.2f} of {len(scored)} masked samples")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
            format="%(message)s",
        )
        if args.command == "gradcheck":
            return cmd_gradcheck(args.op, args.seed)
        cfg = resolve_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.on)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        return cmd_dump_attention(cfg, args.on, args.limit)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
