"""Training loop: Adam, step learning-rate decay, periodic evaluation, checkpoints."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from raunet import checkpoint as ckpt
from raunet.data.synth import DatasetManifest, to_input
from raunet.losses import LossConfig, get_loss
from raunet.metrics import Report, aggregate, evaluate
from raunet.model import RaunetModel, forward
from raunet.tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "step", "lr", "train_loss", "mean_dice", "mean_iou"]


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr0: float = 4e-5
    lr_decay: float = 0.8
    lr_decay_every: int = 30
    lr_unit: str = "epochs"
    epochs: int = 60
    loss: str = "celdice"
    alpha: float = 0.2
    smooth_eps: float = 1e-6
    binary_dice: bool = False
    seed: int = 0
    eval_every: int = 1
    checkpoint_dir: Optional[str] = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs batch statistics)")
        if self.lr_unit not in ("epochs", "steps"):
            raise ValueError("lr_unit must be 'epochs' or 'steps'")
        if self.lr_decay_every < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ValueError("lr_decay_every and eval_every must be positive, epochs non-negative")
        get_loss(self.loss)
        self.loss_config()

    def loss_config(self) -> LossConfig:
        return LossConfig(self.alpha, self.smooth_eps, self.binary_dice)


def learning_rate(cfg: TrainConfig, elapsed: int) -> float:
    """``lr0 * decay ** floor(elapsed / every)`` with ``elapsed`` in the configured unit."""
    return cfg.lr0 * cfg.lr_decay ** (elapsed // cfg.lr_decay_every)


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    lr: float = 0.0
    best_mean_dice: float = -1.0
    seed: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    history: List[dict] = field(default_factory=list)

    def to_tensors(self) -> Dict[str, np.ndarray]:
        out = {
            "state.step": np.float64(self.step),
            "state.epoch": np.float64(self.epoch),
            "state.lr": np.float64(self.lr),
            "state.best_mean_dice": np.float64(self.best_mean_dice),
            "state.seed": np.float64(self.seed),
        }
        for name, arr in self.m.items():
            out[f"adam.m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"adam.v.{name}"] = arr
        return out

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "TrainState":
        if not tensors:
            return cls()
        state = cls(
            step=int(tensors["state.step"]),
            epoch=int(tensors["state.epoch"]),
            lr=float(tensors["state.lr"]),
            best_mean_dice=float(tensors["state.best_mean_dice"]),
            seed=int(tensors["state.seed"]),
        )
        for key, arr in tensors.items():
            if key.startswith("adam.m."):
                state.m[key[7:]] = np.array(arr)
            elif key.startswith("adam.v."):
                state.v[key[7:]] = np.array(arr)
        return state


class Adam:
    def __init__(self, cfg: TrainConfig, state: TrainState):
        self.cfg = cfg
        self.state = state

    def step(self, params: Dict[str, Tensor], lr: float, t: int):
        """One bias-corrected Adam update at step ``t`` (1-based)."""
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.state.m.get(name)
            if m is None:
                m = self.state.m[name] = np.zeros_like(p.data)
                self.state.v[name] = np.zeros_like(p.data)
            v = self.state.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (lr / c1) * m / (np.sqrt(v / c2) + eps)
            p.data -= update.astype(p.data.dtype, copy=False)
            p.grad = None


@dataclass
class SegmentationData:
    train_images: np.ndarray  # uint8 [N, H, W, 3]
    train_masks: np.ndarray
    test_images: np.ndarray
    test_masks: np.ndarray

    @classmethod
    def from_manifest(cls, path) -> "SegmentationData":
        manifest = DatasetManifest.load(path)
        tx, ty = manifest.load_arrays("train")
        try:
            vx, vy = manifest.load_arrays("test")
        except ValueError:
            vx, vy = tx[:0], ty[:0]
        return cls(tx, ty, vx, vy)


def predict(model: RaunetModel, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Argmax class masks [N, H, W] for uint8 images [N, H, W, 3] (eval mode)."""
    dtype = model.precision.dtype
    out = []
    for start in range(0, len(images), batch_size):
        x = to_input(images[start:start + batch_size], dtype)
        logits = forward(model, Tensor(x, precision=model.precision), "eval")
        out.append(np.argmax(logits.data, axis=1).astype(np.uint8))
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:3], np.uint8)


def evaluate_model(model: RaunetModel, images: np.ndarray, masks: np.ndarray, batch_size: int = 16) -> Report:
    k = model.config.num_classes
    pred = predict(model, images, batch_size)
    return aggregate([evaluate(p, t, k) for p, t in zip(pred, masks)])


def _format(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _append_log(path, row: dict):
    new = not os.path.exists(path)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(LOG_COLUMNS)
        writer.writerow([_format(row[c]) for c in LOG_COLUMNS])


def _save(model, state, directory, name):
    if directory:
        ckpt.save_checkpoint(model, state.to_tensors(), os.path.join(directory, name))


def train(model: RaunetModel, data: SegmentationData, cfg: TrainConfig, state: Optional[TrainState] = None,
          log_path: Optional[str] = None) -> TrainState:
    """Train until ``cfg.epochs`` epochs have completed (resuming from ``state``).

    Mini-batches come from a per-epoch permutation seeded by ``(seed, epoch)``,
    so a resumed run sees exactly the batches an uninterrupted run would.
    """
    if len(data.train_images) == 0:
        raise ValueError("training split is empty")
    if data.train_masks.max() >= model.config.num_classes:
        raise ValueError("masks contain class ids beyond the model's num_classes")
    fresh = state is None
    state = state or TrainState(seed=cfg.seed)
    state.lr = learning_rate(cfg, state.epoch if cfg.lr_unit == "epochs" else state.step)
    directory = cfg.checkpoint_dir
    if directory:
        os.makedirs(directory, exist_ok=True)
        log_path = log_path or os.path.join(directory, "train_log.csv")
    if log_path and fresh:
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerow(LOG_COLUMNS)
    if fresh:
        _save(model, state, directory, "last.ckpt")

    loss_fn = get_loss(cfg.loss)
    loss_cfg = cfg.loss_config()
    params = dict(model.named_parameters())
    opt = Adam(cfg, state)
    dtype = model.precision.dtype
    n = len(data.train_images)

    while state.epoch < cfg.epochs:
        order = np.random.default_rng([state.seed, 7, state.epoch]).permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            if len(idx) < 2:
                continue  # batch statistics undefined for a single image
            if cfg.lr_unit == "steps":
                state.lr = learning_rate(cfg, state.step)
            x = Tensor(to_input(data.train_images[idx], dtype), precision=model.precision)
            reason = None
            with Tape() as tape:
                try:
                    logits = forward(model, x, "train")
                    loss = loss_fn(logits, data.train_masks[idx].astype(np.int64), loss_cfg)
                    value = loss.item()
                except FloatingPointError as exc:
                    reason = str(exc)
            if reason is None and not np.isfinite(value):
                reason = "non-finite loss"
            if reason is not None:
                tape.clear()
                _save(model, state, directory, "diverged.ckpt")
                raise DivergenceError(f"{reason} at epoch {state.epoch}, step {state.step}")
            backward(loss, tape)
            state.step += 1
            opt.step(params, state.lr, state.step)
            losses.append(value)
        state.epoch += 1
        if cfg.lr_unit == "epochs":
            state.lr = learning_rate(cfg, state.epoch)
        train_loss = float(np.mean(losses)) if losses else float("nan")

        if state.epoch % cfg.eval_every == 0 or state.epoch == cfg.epochs:
            row = {"epoch": state.epoch, "step": state.step, "lr": state.lr, "train_loss": train_loss,
                   "mean_dice": float("nan"), "mean_iou": float("nan")}
            if len(data.test_images):
                report = evaluate_model(model, data.test_images, data.test_masks, 2 * cfg.batch_size)
                row["mean_dice"], row["mean_iou"] = report.mean_dice, report.mean_iou
                if report.mean_dice > state.best_mean_dice:
                    state.best_mean_dice = report.mean_dice
                    _save(model, state, directory, "best.ckpt")
            state.history.append(row)
            if log_path:
                _append_log(log_path, row)
            log.info("epoch %d step %d lr %.3g loss %.4f mDice %.4f mIOU %.4f", row["epoch"], row["step"],
                     row["lr"], row["train_loss"], row["mean_dice"], row["mean_iou"])
        _save(model, state, directory, "last.ckpt")
    return state
