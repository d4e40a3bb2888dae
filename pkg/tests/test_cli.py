import csv
import filecmp
from pathlib import Path

import numpy as np
import pytest

from mgattn import tensor as T
from mgattn.cli import main
from mgattn.config import RunConfig

SMALL = ["--size", "16"]
FAST = ["--epochs", "2", "--batch", "4"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(root), "--classes", "3", "--per-class", "6", *SMALL, "--seed", "7"]) == 0
    return root


def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text("stage_channels=4,6,8\nblocks_per_stage=1\n")
    return ["--config", str(path)]


def files(root):
    return sorted(p.relative_to(root) for p in Path(root).rglob("*") if p.is_file())


def test_gen_data_counts(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["gen-data", "--classes", "10", "--per-class", "20", "--size", "64", "--seed", "7", "--out", str(out)]) == 0
    assert len(list(out.rglob("*.ppm"))) == 200
    assert len(list(out.rglob("*.mask.pgm"))) == 200
    assert "200 images" in capsys.readouterr().out


def test_gen_data_byte_identical(tmp_path, dataset):
    again = tmp_path / "again"
    assert main(["gen-data", "--out", str(again), "--classes", "3", "--per-class", "6", *SMALL, "--seed", "7"]) == 0
    assert files(again) == files(dataset)
    for f in files(dataset):
        assert filecmp.cmp(dataset / f, again / f, shallow=False), f


@pytest.mark.parametrize("argv", [["--classes", "0"], ["--per-class", "-1"], ["--size", "20"], ["--delta", "30"]])
def test_gen_data_usage_errors(tmp_path, argv, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "x"), *argv]) == 1
    assert "usage error" in capsys.readouterr().err


def test_unknown_command_and_flag(capsys):
    assert main(["fly"]) == 1
    assert main(["train", "--bogus"]) == 1
    assert main(["train", "--variant", "other"]) == 1


def test_gen_data_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen-data", "--out", str(blocker / "sub"), *SMALL, "--classes", "2", "--per-class", "1"]) == 2


@pytest.mark.parametrize("variant", ["baseline", "attention", "mga"])
def test_train_variants(tmp_path, dataset, variant, capsys):
    out = tmp_path / variant
    argv = ["train", "--data", str(dataset), "--out", str(out), "--variant", variant, *FAST, *tiny_config(tmp_path)]
    assert main(argv) == 0
    assert (out / "model.mgat").exists() and (out / "model.mgat.manifest").exists()
    rows = list(csv.DictReader(open(out / "epochs.csv")))
    assert len(rows) == 2
    if variant == "baseline":
        assert all(r["loss_att"] == "nan" for r in rows)
    elif variant == "mga":
        assert rows[0]["loss_att"] != rows[1]["loss_att"]
    cfg = RunConfig.load(out / "config.txt")
    assert cfg.variant == variant and cfg.epochs == 2
    assert cfg.effective_tau() == (0.1 if variant == "mga" else 0.0)


def test_attention_with_tau_rejected(tmp_path, dataset, capsys):
    argv = ["train", "--data", str(dataset), "--out", str(tmp_path / "o"), "--variant", "attention", "--tau", "0.1"]
    assert main(argv) == 1
    assert "only the mga variant" in capsys.readouterr().err


def test_train_mga_missing_mask_names_sample(tmp_path, dataset, capsys):
    import shutil

    data = tmp_path / "data"
    shutil.copytree(dataset, data)
    for m in data.glob("class_000/*.mask.pgm"):
        m.unlink()
    argv = ["train", "--data", str(data), "--out", str(tmp_path / "o"), *FAST, *tiny_config(tmp_path)]
    assert main(argv) == 2
    assert "class_000/s0" in capsys.readouterr().err
    # the baseline variant never needs masks
    argv = ["train", "--data", str(data), "--out", str(tmp_path / "b"), "--variant", "baseline", *FAST, *tiny_config(tmp_path)]
    assert main(argv) == 0


def test_config_echo_reproduces_run(tmp_path, dataset):
    first = tmp_path / "first"
    assert main(["train", "--data", str(dataset), "--out", str(first), *FAST, *tiny_config(tmp_path), "--seed", "3"]) == 0
    second = tmp_path / "second"
    assert main(["train", "--config", str(first / "config.txt"), "--out", str(second)]) == 0
    assert (first / "epochs.csv").read_bytes() == (second / "epochs.csv").read_bytes()
    assert (first / "model.mgat").read_bytes() == (second / "model.mgat").read_bytes()


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "tiny.cfg"
    cfg.write_text("stage_channels=4,6,8\nblocks_per_stage=1\n")
    assert main(["train", "--data", str(dataset), "--out", str(out), "--epochs", "3", "--batch", "4", "--config", str(cfg)]) == 0
    return out


def test_eval_prints_two_decimals_and_is_repeatable(trained, dataset, capsys):
    argv = ["eval", "--data", str(dataset), "--checkpoint", str(trained / "model.mgat")]
    assert main(argv) == 0
    first = capsys.readouterr().out
    assert main(argv) == 0
    assert capsys.readouterr().out == first
    assert first.startswith("test accuracy: ") and len(first.strip().split()[-1].split(".")[1]) == 2


def test_eval_without_masks(tmp_path, trained, dataset):
    import shutil

    data = tmp_path / "data"
    shutil.copytree(dataset, data)
    for m in data.rglob("*.mask.pgm"):
        m.unlink()
    assert main(["eval", "--data", str(data), "--checkpoint", str(trained / "model.mgat")]) == 0
    assert main(["eval", "--data", str(data), "--checkpoint", str(trained / "model.mgat"), "--on", "train"]) == 0


def test_eval_checkpoint_errors(tmp_path, trained, dataset):
    assert main(["eval", "--data", str(dataset), "--checkpoint", str(tmp_path / "none.mgat")]) == 2
    assert main(["eval", "--data", str(dataset), "--checkpoint", str(trained / "model.mgat"), "--resize", "20"]) == 2


def test_dump_attention(tmp_path, trained, dataset, capsys):
    out = tmp_path / "att"
    argv = ["dump-attention", "--data", str(dataset), "--checkpoint", str(trained / "model.mgat"), "--out", str(out)]
    assert main(argv) == 0
    pgms = list(out.glob("*.pgm"))
    n_test = 3 * 2
    assert len(pgms) == 2 * n_test
    from mgattn.pnm import read_pnm

    for p in pgms:
        raw, maxval = read_pnm(p)
        assert maxval == 255 and raw.min() >= 0 and raw.max() <= 255
    rows = list(csv.DictReader(open(out / "attention_stats.csv")))
    assert len(rows) == n_test
    assert main(argv + ["--limit", "2", "--out", str(tmp_path / "two")]) == 0
    assert len(list((tmp_path / "two").glob("*.pgm"))) == 4


def test_dump_attention_rejects_baseline(tmp_path, dataset):
    out = tmp_path / "b"
    assert main(["train", "--data", str(dataset), "--out", str(out), "--variant", "baseline", *FAST, *tiny_config(tmp_path)]) == 0
    assert main(["dump-attention", "--data", str(dataset), "--out", str(out)]) == 1


def test_ablate_single_seed(tmp_path, dataset, capsys):
    out = tmp_path / "abl"
    argv = ["ablate", "--data", str(dataset), "--out", str(out), "--seeds", "1", *FAST, *tiny_config(tmp_path)]
    assert main(argv) == 0
    rows = list(csv.reader(open(out / "ablation.csv")))
    assert rows[0] == ["variant", "seed_0", "median"]
    assert [r[0] for r in rows[1:]] == ["baseline", "attention", "mga"]
    assert "mga" in (out / "ablation.txt").read_text()
    assert len(list(out.glob("*.mgat"))) == 3


def test_ablate_missing_masks(tmp_path, dataset):
    import shutil

    data = tmp_path / "data"
    shutil.copytree(dataset, data)
    next(data.rglob("*.mask.pgm")).unlink()
    assert main(["ablate", "--data", str(data), "--out", str(tmp_path / "o"), "--seeds", "1", *FAST]) != 0


def test_gradcheck_default_and_single(capsys):
    assert main(["gradcheck"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) > 10 and all(l.endswith("ok") for l in lines)
    assert any(l.startswith("end_to_end") for l in lines)
    assert main(["gradcheck", "--op", "conv2d"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("conv2d")


def test_gradcheck_catches_corrupted_rule(monkeypatch, capsys):
    good = T.BACKWARD_RULES["conv2d"]

    def corrupted(node, g):
        gx, gw, gb = good(node, g)
        return gx, 1.01 * gw, gb

    monkeypatch.setitem(T.BACKWARD_RULES, "conv2d", corrupted)
    assert main(["gradcheck", "--op", "conv2d"]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_config_file_roundtrip(tmp_path):
    cfg = RunConfig(classes=4, tau=0.3, augment=False, lam=0.25, data="d")
    (tmp_path / "c.txt").write_text(cfg.dumps())
    back = RunConfig.load(tmp_path / "c.txt")
    assert back == cfg


def test_config_file_errors(tmp_path):
    (tmp_path / "c.txt").write_text("nonsense_key=3\n")
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.load(tmp_path / "c.txt")
    (tmp_path / "c.txt").write_text("epochs=many\n")
    with pytest.raises(ValueError, match="epochs"):
        RunConfig.load(tmp_path / "c.txt")
    assert main(["train", "--config", str(tmp_path / "c.txt")]) == 1


def test_flags_override_config_file(tmp_path):
    from mgattn.cli import build_parser, resolve_config

    (tmp_path / "c.txt").write_text("epochs=7\nlr=0.2\n")
    args = build_parser().parse_args(["train", "--config", str(tmp_path / "c.txt"), "--epochs", "3"])
    cfg = resolve_config(args)
    assert cfg.epochs == 3 and cfg.lr == 0.2
