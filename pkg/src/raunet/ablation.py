"""Fusion x loss ablation on one dataset with shared initialization seeds."""

from __future__ import annotations

import csv
import dataclasses
import os
from typing import Iterable, List

import numpy as np

from raunet.model import ModelConfig, build
from raunet.tensor import Precision
from raunet.trainer import SegmentationData, TrainConfig, train

FUSIONS = (("aam", True), ("plain", False))
LOSS_NAMES = ("ce", "dice", "celdice")


def run_cell(data, model_cfg: ModelConfig, train_cfg: TrainConfig, use_aam: bool, loss: str, seed: int,
             precision=Precision.F32):
    """Train one configuration; the init and shuffle seeds are both ``seed``."""
    mcfg = dataclasses.replace(model_cfg, use_aam=use_aam)
    tcfg = dataclasses.replace(train_cfg, loss=loss, seed=seed, checkpoint_dir=None)
    model = build(mcfg, seed, precision)
    state = train(model, data, tcfg)
    return state.history


def run_ablation(data: SegmentationData, model_cfg: ModelConfig, train_cfg: TrainConfig, seeds: Iterable[int],
                 out_dir, precision=Precision.F32, fusions=FUSIONS, losses=LOSS_NAMES) -> List[dict]:
    """Write ``ablation.csv`` (one row per fusion x loss) and ``ablation_curves.csv``.

    Each summary row reports the median over seeds of the final-evaluation
    mean Dice / IOU, plus the median of each run's best mean Dice.
    """
    seeds = list(seeds)
    os.makedirs(out_dir, exist_ok=True)
    curves_path = os.path.join(out_dir, "ablation_curves.csv")
    rows = []
    with open(curves_path, "w", newline="", encoding="utf-8") as fh:
        curves = csv.writer(fh, lineterminator="\n")
        curves.writerow(["fusion", "loss", "seed", "epoch", "train_loss", "mean_dice", "mean_iou"])
        for fusion, use_aam in fusions:
            for loss in losses:
                finals, ious, bests = [], [], []
                for seed in seeds:
                    history = run_cell(data, model_cfg, train_cfg, use_aam, loss, seed, precision)
                    for h in history:
                        curves.writerow([fusion, loss, seed, h["epoch"], repr(h["train_loss"]),
                                         repr(h["mean_dice"]), repr(h["mean_iou"])])
                    fh.flush()
                    finals.append(history[-1]["mean_dice"] if history else float("nan"))
                    ious.append(history[-1]["mean_iou"] if history else float("nan"))
                    bests.append(max((h["mean_dice"] for h in history), default=float("nan")))
                rows.append({"fusion": fusion, "loss": loss, "seeds": len(seeds),
                             "mean_dice": float(np.median(finals)), "mean_iou": float(np.median(ious)),
                             "best_mean_dice": float(np.median(bests))})
    with open(os.path.join(out_dir, "ablation.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, ["fusion", "loss", "seeds", "mean_dice", "mean_iou", "best_mean_dice"],
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return rows
