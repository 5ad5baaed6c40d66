"""Pixel-wise cross entropy, soft Dice and the CEL-Dice blend."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from raunet.ops import softmax_channels
from raunet.tensor import Tensor, log, make_result, scale, sub


@dataclass
class LossConfig:
    alpha: float = 0.2
    smooth_eps: float = 1e-6
    binary_dice: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.smooth_eps <= 0:
            raise ValueError("smooth_eps must be positive")


def _check_target(pred: Tensor, target) -> np.ndarray:
    target = np.asarray(target)
    if pred.ndim != 4:
        raise ValueError(f"expected [N,K,H,W] predictions, got {pred.shape}")
    n, k, h, w = pred.shape
    if target.shape != (n, h, w):
        raise ValueError(f"target shape {target.shape} does not match predictions {pred.shape}")
    if not np.issubdtype(target.dtype, np.integer):
        raise TypeError("target must hold integer class ids")
    if target.size and (target.min() < 0 or target.max() >= k):
        raise ValueError(f"target ids must lie in [0, {k})")
    return target.astype(np.int64, copy=False)


def _one_hot(target: np.ndarray, k: int, dtype) -> np.ndarray:
    onehot = np.zeros((target.shape[0], k) + target.shape[1:], dtype=dtype)
    np.put_along_axis(onehot, target[:, None], 1, axis=1)
    return onehot


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean over pixels of -log softmax(logits)[true class] (log-sum-exp form)."""
    target = _check_target(logits, target)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    count = target.size
    terms = -np.take_along_axis(logp, target[:, None], axis=1).ravel()
    # mean as offset from one term: exact when every pixel contributes the same value
    ref = terms[0]
    value = np.asarray(ref + (terms - ref).sum() / count, dtype=logits.dtype)

    def grad_fn(g):
        probs = np.exp(logp)
        probs -= _one_hot(target, logits.shape[1], logits.dtype)
        return (probs * (g / count),)

    return make_result("cross_entropy", value, (logits,), grad_fn)


def soft_dice(probs: Tensor, target, smooth_eps: float = 1e-6, binary: bool = False) -> Tensor:
    """Soft Dice over the whole batch, averaged over foreground classes.

    For each foreground class c: ``(2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)``.
    With ``binary=True`` all foreground classes collapse into one
    instrument-vs-background score.
    """
    target = _check_target(probs, target)
    k = probs.shape[1]
    if k < 2:
        raise ValueError("soft_dice needs at least one foreground class")
    p = probs.data
    if binary:
        fg_p = p[:, 1:].sum(axis=1, keepdims=True)
        fg_g = (target > 0)[:, None].astype(p.dtype)
    else:
        fg_p = p[:, 1:]
        fg_g = _one_hot(target, k, p.dtype)[:, 1:]
    axes = (0, 2, 3)
    inter = (fg_p * fg_g).sum(axis=axes)
    denom = fg_p.sum(axis=axes) + fg_g.sum(axis=axes) + smooth_eps
    per_class = (2.0 * inter + smooth_eps) / denom
    m = per_class.size
    value = np.asarray(per_class.mean(), dtype=p.dtype)

    def grad_fn(g):
        shape = (1, -1, 1, 1)
        d = (2.0 * fg_g / denom.reshape(shape) - (per_class / denom).reshape(shape)) * (g / m)
        out = np.zeros_like(p)
        out[:, 1:] = d  # binary: d is [N,1,H,W] and broadcasts over every foreground class
        return (out,)

    return make_result("soft_dice", value, (probs,), grad_fn)


def cel_dice(logits: Tensor, target, cfg: LossConfig | None = None) -> Tensor:
    """``(1 - alpha) * H - alpha * log(D)``."""
    cfg = cfg or LossConfig()
    h = cross_entropy(logits, target)
    d = soft_dice(softmax_channels(logits), target, cfg.smooth_eps, cfg.binary_dice)
    if not d.data > 0:
        raise FloatingPointError("soft Dice collapsed to zero")
    return sub(scale(h, 1.0 - cfg.alpha), scale(log(d), cfg.alpha))


def dice_loss(logits: Tensor, target, cfg: LossConfig | None = None) -> Tensor:
    """Plain Dice loss ``1 - D`` on softmax probabilities."""
    cfg = cfg or LossConfig()
    d = soft_dice(softmax_channels(logits), target, cfg.smooth_eps, cfg.binary_dice)
    return scale(d, -1.0, 1.0)


LOSSES = {
    "ce": lambda logits, target, cfg=None: cross_entropy(logits, target),
    "dice": dice_loss,
    "celdice": cel_dice,
}


def get_loss(name: str):
    try:
        return LOSSES[name]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None
