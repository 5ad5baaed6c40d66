"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints (see
conftest.py) and that is written to ``acceptance_out/acceptance.txt``.
Training-based criteria take several minutes on one CPU core.
"""

import csv
import dataclasses
import math
import os
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from raunet import config as rconfig
from raunet.ablation import run_ablation
from raunet.checkpoint import load_checkpoint, save_checkpoint
from raunet.data.synth import generate
from raunet.gradcheck import run_suite
from raunet.losses import LossConfig, cel_dice, cross_entropy, soft_dice
from raunet.metrics import evaluate
from raunet.model import ModelConfig, build, count_params
from raunet.ops import softmax_channels
from raunet.tensor import Precision
from raunet.trainer import SegmentationData, TrainConfig, TrainState, evaluate_model, predict, train

from conftest import t64

pytestmark = pytest.mark.slow

ROOT = Path(__file__).resolve().parents[1]
OUT = Path(os.environ.get("RAUNET_ACCEPTANCE_OUT", ROOT / "acceptance_out"))
RESULTS = {}


@contextmanager
def criterion(number, title):
    note = []
    try:
        yield note
    except BaseException:
        RESULTS[number] = ("FAIL", title, "; ".join(note))
        _write_report()
        raise
    RESULTS[number] = ("PASS", title, "; ".join(note))
    _write_report()


def report_lines():
    return [f"[{status}] {n}. {title}" + (f" ({note})" if note else "")
            for n, (status, title, note) in sorted(RESULTS.items())]


def _write_report():
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "acceptance.txt").write_text("\n".join(report_lines()) + "\n")


def _desk_data(cfg_name, subdir):
    cfg = rconfig.load(ROOT / "configs" / cfg_name)
    root = OUT / subdir
    generate(cfg.gen, root)
    return cfg, SegmentationData.from_manifest(root / "manifest.tsv")


def _per_seed_finals(curves_csv):
    finals = {}
    for row in csv.DictReader(open(curves_csv)):
        finals[(row["fusion"], row["loss"], int(row["seed"]))] = float(row["mean_dice"])
    return finals


# -- 1 -------------------------------------------------------------------------

def test_c1_gradient_suite():
    with criterion(1, "gradient suite, 20 random shapes per op, F64") as note:
        start = time.perf_counter()
        results = run_suite(cases_per_op=20, seed=0)
        elapsed = time.perf_counter() - start
        worst = max(results, key=lambda r: r.max_rel_err / r.tolerance)
        note.append(f"{len(results)} ops, worst {worst.op} {worst.max_rel_err:.1e}, {elapsed:.0f}s")
        required = {"conv2d", "transposed_conv2d", "batchnorm2d", "relu", "softmax_channels", "maxpool2d",
                    "global_avg_pool", "aam", "cross_entropy", "soft_dice", "cel_dice"}
        assert required <= {r.op for r in results}
        assert all(r.cases >= 20 for r in results)
        failed = [(r.op, r.max_rel_err) for r in results if not r.ok]
        assert not failed, failed
        assert elapsed < 120


# -- 2 -------------------------------------------------------------------------

def test_c2_parameter_accounting():
    with criterion(2, "full-scale parameter accounting") as note:
        aam = count_params(build(ModelConfig(use_aam=True)))
        base = count_params(build(ModelConfig(use_aam=False)))
        model = build(ModelConfig(use_aam=True))
        conv_weights = sum(t.size for name, t in model.named_parameters()
                           if ".aam" in f".{name}" and t.ndim == 4)
        overhead = aam["aam"] / base["total"]
        note.append(f"aam {aam['aam']:,} ({conv_weights:,} conv weights), totals {base['total']:,} / "
                    f"{aam['total']:,}, overhead {overhead:.2%}")
        assert conv_weights == 270_336
        assert abs(aam["aam"] - 0.27e6) <= 0.03e6
        assert abs(aam["aam"] - 0.26e6) <= 0.03e6
        assert abs(base["total"] - 21.80e6) <= 0.10 * 21.80e6
        assert abs(aam["total"] - 22.06e6) <= 0.10 * 22.06e6
        assert aam["total"] - base["total"] == aam["aam"]
        assert overhead < 0.02


# -- 3 -------------------------------------------------------------------------

def _per_class_dice(probs, target, c):
    """Soft Dice of class c alone: the two-class problem {not c, c}."""
    two = np.stack([1.0 - probs[:, c], probs[:, c]], axis=1)
    return soft_dice(t64(two), (target == c).astype(np.int64)).item()


def test_c3_loss_identities():
    with criterion(3, "loss identities") as note:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(50):
            k = int(rng.integers(2, 6))
            logits = rng.standard_normal((2, k, 5, 4)) * 3
            target = rng.integers(0, k, (2, 5, 4))
            h = cross_entropy(t64(logits), target).item()
            d = soft_dice(softmax_channels(t64(logits)), target).item()
            worst = max(worst, abs(cel_dice(t64(logits), target, LossConfig(alpha=0.0)).item() - h),
                        abs(cel_dice(t64(logits), target, LossConfig(alpha=1.0)).item() + math.log(d)))
        assert worst <= 1e-12
        for k in (2, 3, 4, 11):
            assert cross_entropy(t64(np.zeros((2, k, 3, 3))), rng.integers(0, k, (2, 3, 3))).item() == math.log(k)

        target = rng.integers(0, 4, (2, 8, 8))
        perfect = 50.0 * np.moveaxis(np.eye(4)[target], -1, 1)
        loss = cel_dice(t64(perfect), target).item()
        assert loss < 1e-6

        logits = rng.standard_normal((1, 4, 8, 8))
        target = rng.integers(0, 4, (1, 8, 8))
        target[0, 0, :3] = (1, 2, 3)
        probs = softmax_channels(t64(logits)).data
        background = np.zeros((1, 4, 8, 1))
        background[:, 0] = 1.0
        drift = 0.0
        for extra in (8, 64, 512):
            p = np.concatenate([probs, np.repeat(background, extra, axis=3)], axis=3)
            t = np.concatenate([target, np.zeros((1, 8, extra), np.int64)], axis=2)
            for c in (1, 2, 3):
                drift = max(drift, abs(_per_class_dice(p, t, c) - _per_class_dice(probs, target, c)))
        note.append(f"endpoint err {worst:.1e}, perfect L {loss:.1e}, background drift {drift:.1e}")
        assert drift < 1e-9


# -- 4 -------------------------------------------------------------------------

def test_c4_metric_identities():
    with criterion(4, "metric identities on 1,000 mask pairs") as note:
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(1000):
            k = int(rng.integers(2, 8))
            shape = tuple(rng.integers(1, 12, 2))
            truth = rng.integers(0, k, shape)
            # mix of exact, perturbed and unrelated predictions
            pred = np.where(rng.random(shape) < rng.random(), truth, rng.integers(0, k, shape))
            r = evaluate(pred, truth, k)
            defined = ~np.isnan(r.dice)
            worst = max(worst, float(np.max(np.abs(r.iou[defined] - r.dice[defined] / (2 - r.dice[defined])))))
            np.testing.assert_array_equal(r.confusion.sum(axis=1), np.bincount(truth.ravel(), minlength=k))
            assert r.confusion.sum() == truth.size
        note.append(f"max |iou - dice/(2-dice)| = {worst:.1e}")
        assert worst <= 1e-12


# -- 5 and 6 -------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_ablation():
    cfg, data = _desk_data("desk.cfg", "desk_data")
    rows = run_ablation(data, cfg.model, cfg.train, seeds=(0, 1, 2), out_dir=OUT / "desk_fusion",
                        fusions=(("aam", True), ("plain", False)), losses=("celdice",))
    return cfg, {r["fusion"]: r for r in rows}, _per_seed_finals(OUT / "desk_fusion" / "ablation_curves.csv")


def test_c5_desk_training(desk_ablation):
    with criterion(5, "desk training reaches test mean_dice >= 0.80 (median of 3 seeds)") as note:
        cfg, rows, finals = desk_ablation
        seeds = [finals[("aam", "celdice", s)] for s in range(3)]
        note.append(f"seeds {', '.join(f'{v:.3f}' for v in seeds)}; median {rows['aam']['mean_dice']:.3f} "
                    f"at epoch {cfg.train.epochs}")
        assert cfg.train.epochs <= 60 and cfg.model.width_mult == 1 / 8 and cfg.train.batch_size == 8
        assert rows["aam"]["mean_dice"] >= 0.80


def test_c6_aam_direction(desk_ablation):
    with criterion(6, "AAM median mean_dice >= plain-fusion baseline") as note:
        _, rows, finals = desk_ablation
        delta = rows["aam"]["mean_dice"] - rows["plain"]["mean_dice"]
        note.append(f"aam {rows['aam']['mean_dice']:.4f} vs plain {rows['plain']['mean_dice']:.4f}, "
                    f"delta {delta:+.4f}; plain seeds "
                    + ", ".join(f"{finals[('plain', 'celdice', s)]:.3f}" for s in range(3)))
        assert delta >= 0


# -- 7 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def imbalance_ablation():
    cfg, data = _desk_data("imbalance.cfg", "imbalance_data")
    fg = float(np.mean(np.concatenate([data.train_masks.ravel(), data.test_masks.ravel()]) > 0))
    rows = run_ablation(data, cfg.model, cfg.train, seeds=(0, 1, 2), out_dir=OUT / "imbalance_loss",
                        fusions=(("aam", True),), losses=("ce", "dice", "celdice"))
    return fg, {r["loss"]: r["mean_dice"] for r in rows}


def test_c7_loss_direction(imbalance_ablation):
    with criterion(7, "CEL-Dice >= CE and within 0.02 of best on <= 1% foreground") as note:
        fg, score = imbalance_ablation
        best = max(score["ce"], score["dice"])
        note.append(f"foreground {fg:.2%}; ce {score['ce']:.4f} dice {score['dice']:.4f} "
                    f"celdice {score['celdice']:.4f}; curves in {OUT / 'imbalance_loss'}")
        assert fg <= 0.01
        assert score["celdice"] >= score["ce"]
        assert score["celdice"] >= best - 0.02
        assert (OUT / "imbalance_loss" / "ablation_curves.csv").exists()


# -- 8 -------------------------------------------------------------------------

TINY_RUN = """\
num_classes = 4
width_mult = 1/8
block_counts = 1,1,1,1
input_size = 32,32
batch_size = 4
epochs = 3
lr = 0.005
image_size = 32,32
num_instruments = 3
train_images = 12
test_images = 4
group_size = 4
gen_seed = 8
"""


def _cli(*args, cwd):
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
    proc = subprocess.run([sys.executable, "-m", "raunet.cli", *args], cwd=cwd, env=env,
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


def test_c8_determinism_and_persistence(tmp_path):
    with criterion(8, "byte-identical logs, bit-identical checkpoints, F64 resume") as note:
        (tmp_path / "run.cfg").write_text(TINY_RUN)
        _cli("gen-data", "--config", "run.cfg", "--out", "data", cwd=tmp_path)
        for name in ("a", "b"):
            _cli("train", "--config", "run.cfg", "--manifest", "data/manifest.tsv", "--seed", "5", "--out", name,
                 cwd=tmp_path)
        log_a = (tmp_path / "a" / "train_log.csv").read_bytes()
        assert log_a == (tmp_path / "b" / "train_log.csv").read_bytes()
        assert (tmp_path / "a" / "last.ckpt").read_bytes() == (tmp_path / "b" / "last.ckpt").read_bytes()

        data = SegmentationData.from_manifest(tmp_path / "data" / "manifest.tsv")
        model, _ = load_checkpoint(tmp_path / "a" / "best.ckpt")
        save_checkpoint(model, {}, tmp_path / "again.ckpt")
        reloaded, _ = load_checkpoint(tmp_path / "again.ckpt")
        assert np.array_equal(predict(model, data.test_images), predict(reloaded, data.test_images))
        r1, r2 = evaluate_model(model, data.test_images, data.test_masks), \
            evaluate_model(reloaded, data.test_images, data.test_masks)
        assert r1.mean_dice == r2.mean_dice and np.array_equal(r1.confusion, r2.confusion)

        cfg = rconfig.load(tmp_path / "run.cfg")
        tcfg = cfg.train
        straight = build(cfg.model, 9, Precision.F64)
        s_state = train(straight, data, tcfg)
        first = build(cfg.model, 9, Precision.F64)
        train(first, data, dataclasses.replace(tcfg, epochs=1, checkpoint_dir=str(tmp_path / "r")))
        resumed, tensors = load_checkpoint(tmp_path / "r" / "last.ckpt")
        r_state = train(resumed, data, tcfg, state=TrainState.from_tensors(tensors))
        for (name, a), (_, b) in zip(straight.named_tensors(), resumed.named_tensors()):
            assert np.array_equal(a.data, b.data), name
        assert r_state.history[-1] == s_state.history[-1]
        note.append(f"{len(log_a.splitlines()) - 1} log rows identical across processes; resume exact at "
                    f"step {r_state.step}")


# -- 9 -------------------------------------------------------------------------

# Best rates found for each fusion on this task; the attention model needs the
# larger one and still falls short (see the notes in the decisions ledger).
OVERFIT = {True: TrainConfig(batch_size=2, lr0=5e-2, lr_decay_every=1000, epochs=200, eval_every=200),
           False: TrainConfig(batch_size=2, lr0=2e-2, lr_decay_every=1000, epochs=200, eval_every=200)}


def _covering_pair(masks, k):
    """First two training images whose masks together hold every class."""
    present = [set(np.unique(m)) for m in masks]
    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            if present[i] | present[j] == set(range(k)):
                return [i, j]
    raise AssertionError("no image pair covers every class")


def _overfit(cfg, data, use_aam):
    idx = _covering_pair(data.train_masks, cfg.model.num_classes)
    images, masks = data.train_images[idx], data.train_masks[idx]
    model = build(dataclasses.replace(cfg.model, use_aam=use_aam), 0)
    train(model, SegmentationData(images, masks, images, masks), OVERFIT[use_aam])
    return idx, evaluate_model(model, images, masks).mean_dice


def test_c9_two_image_overfit():
    with criterion(9, "2-image overfit of the desk model reaches train mean_dice > 0.99") as note:
        cfg, data = _desk_data("desk.cfg", "desk_data")
        _, plain = _overfit(cfg, data, use_aam=False)
        idx, dice = _overfit(cfg, data, use_aam=True)
        note.append(f"images {idx}, 200 epochs: aam {dice:.4f}, plain fusion {plain:.4f}")
        assert plain > 0.99
        assert dice > 0.99
