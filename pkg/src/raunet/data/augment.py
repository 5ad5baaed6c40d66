"""Geometric augmentation applied identically to an image and its mask.

The forward transform is rotate (about the canvas centre, degrees,
counter-clockwise on screen), then shift by (dx, dy) pixels, then optional
horizontal/vertical flips. Images are resampled bilinearly, masks by nearest
neighbour; uncovered pixels take ``fill`` colour and background class 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class AugmentParams:
    rotate: float = 0.0
    shift: tuple = (0, 0)
    flip_h: bool = False
    flip_v: bool = False


def _source_coords(h, w, p: AugmentParams):
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    if p.flip_h:
        xs = (w - 1) - xs
    if p.flip_v:
        ys = (h - 1) - ys
    xs = xs - p.shift[0]
    ys = ys - p.shift[1]
    if p.rotate % 360:
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        t = np.deg2rad(p.rotate)
        c, s = np.cos(t), np.sin(t)
        dx, dy = xs - cx, ys - cy
        # inverse of a screen-space counter-clockwise rotation (y axis points down)
        xs = cx + c * dx - s * dy
        ys = cy + s * dx + c * dy
    return ys, xs


def warp_mask(mask: np.ndarray, p: AugmentParams) -> np.ndarray:
    h, w = mask.shape
    ys, xs = _source_coords(h, w, p)
    yi = np.rint(ys).astype(np.int64)
    xi = np.rint(xs).astype(np.int64)
    valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
    out = np.zeros_like(mask)
    out[valid] = mask[yi[valid], xi[valid]]
    return out


def warp_image(image: np.ndarray, p: AugmentParams, fill=(0, 0, 0)) -> np.ndarray:
    h, w = image.shape[:2]
    ys, xs = _source_coords(h, w, p)
    tol = 1e-6
    valid = (ys > -tol) & (ys < h - 1 + tol) & (xs > -tol) & (xs < w - 1 + tol)
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    src = image.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    out = np.where(valid[..., None], out, np.asarray(fill, dtype=np.float64))
    return np.clip(np.rint(out), 0, 255).astype(image.dtype)


def border_color(image: np.ndarray):
    edge = np.concatenate([image[0], image[-1], image[:, 0], image[:, -1]])
    return tuple(int(v) for v in np.median(edge, axis=0))


def augment(sample, params: AugmentParams):
    """Apply ``params`` to a :class:`~raunet.data.synth.Sample`."""
    image = warp_image(sample.image, params, border_color(sample.image))
    mask = warp_mask(sample.mask, params)
    meta = dict(sample.meta)
    meta["augment"] = params
    return replace(sample, image=image, mask=mask, meta=meta)


def random_params(rng, max_rotate=30.0, max_shift=0.1, size=(64, 64)) -> AugmentParams:
    h, w = size
    return AugmentParams(
        rotate=float(rng.uniform(-max_rotate, max_rotate)),
        shift=(int(rng.integers(-int(max_shift * w), int(max_shift * w) + 1)),
               int(rng.integers(-int(max_shift * h), int(max_shift * h) + 1))),
        flip_h=bool(rng.integers(0, 2)),
        flip_v=bool(rng.integers(0, 2)),
    )


def random_augment(sample, seed, **ranges):
    rng = np.random.default_rng(seed)
    return augment(sample, random_params(rng, size=sample.mask.shape, **ranges))
