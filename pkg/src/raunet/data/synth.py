"""Synthetic cataract-instrument-like segmentation data.

Each image shows an ocular background (radial gradient plus low-frequency
noise) with one or two instruments drawn as shafts with class-specific width,
tint and tip geometry. Specular highlights are painted onto the image only,
so labels never see them. Images come in bursts ("videos") that share
background and lighting; the train/test split is made per burst.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from raunet.data import augment as aug
from raunet.data.netpbm import read_pgm, read_ppm, write_pgm, write_ppm

TIP_SHAPES = ("wedge", "round", "fork", "hook", "blade")

# Distinct metallic tints, one per instrument family (cycled beyond ten).
PALETTE = np.array([
    (205, 205, 215), (120, 150, 235), (235, 205, 110), (140, 225, 140), (235, 135, 200),
    (95, 95, 110), (245, 245, 245), (185, 130, 85), (120, 215, 225), (195, 150, 245),
], dtype=np.float64)


@dataclass
class InstrumentFamily:
    class_id: int
    width: float  # shaft width as a fraction of min(H, W)
    tip: str
    tint: np.ndarray


def family(class_id: int) -> InstrumentFamily:
    """Fixed geometry/tint of instrument family ``class_id`` (1-based)."""
    i = class_id - 1
    width = (0.035, 0.07, 0.05, 0.03, 0.06, 0.045, 0.04, 0.065, 0.055, 0.038)[i % 10]
    return InstrumentFamily(class_id, width, TIP_SHAPES[i % len(TIP_SHAPES)], PALETTE[i % len(PALETTE)])


@dataclass
class GenSpec:
    image_size: Tuple[int, int] = (64, 64)
    num_instruments: int = 10
    train_images: int = 240
    test_images: int = 60
    group_size: int = 10
    max_instruments_per_image: int = 2
    foreground_ratio_target: float = 0.04
    specular_count: Tuple[int, int] = (0, 2)
    specular_intensity: int = 255
    specular_size: Tuple[float, float] = (0.02, 0.05)
    num_augmented: int = 0
    seed: int = 0

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.specular_count = tuple(int(v) for v in self.specular_count)
        self.specular_size = tuple(float(v) for v in self.specular_size)
        if not 0.0 < self.foreground_ratio_target < 0.2:
            raise ValueError("foreground_ratio_target must lie in (0, 0.2)")
        if self.num_instruments < 1 or not 1 <= self.max_instruments_per_image <= 2:
            raise ValueError("need >= 1 instrument family and 1..2 instruments per image")
        if min(self.image_size) < 8:
            raise ValueError("image_size too small")
        if self.train_images < 0 or self.test_images < 0 or self.group_size < 1 or self.num_augmented < 0:
            raise ValueError("image counts must be non-negative and group_size positive")
        lo, hi = self.specular_count
        if lo < 0 or hi < lo:
            raise ValueError("specular_count must be a non-empty range")
        lo, hi = self.specular_size
        if lo <= 0 or hi < lo:
            raise ValueError("specular_size must be a non-empty positive range")
        if not 0 <= self.specular_intensity <= 255:
            raise ValueError("specular_intensity must fit in 8 bits")

    @property
    def num_classes(self) -> int:
        return self.num_instruments + 1


@dataclass
class Sample:
    image: np.ndarray  # uint8 [H, W, 3]
    mask: np.ndarray  # uint8 [H, W], class ids
    meta: Dict = field(default_factory=dict)


@dataclass
class ManifestRecord:
    group_id: int
    split: str
    image_path: str
    mask_path: str
    class_ids: Tuple[int, ...]


@dataclass
class DatasetManifest:
    records: List[ManifestRecord]
    root: str = "."

    def split(self, name: str) -> List[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def class_frequency(self) -> Dict[int, int]:
        """Number of images containing each instrument class."""
        freq: Dict[int, int] = {}
        for r in self.records:
            for c in r.class_ids:
                freq[c] = freq.get(c, 0) + 1
        return dict(sorted(freq.items()))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in self.records:
                ids = ",".join(str(c) for c in r.class_ids)
                fh.write(f"{r.group_id}\t{r.split}\t{r.image_path}\t{r.mask_path}\t{ids}\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        records = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 5:
                    raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields")
                ids = tuple(int(c) for c in parts[4].split(",") if c)
                records.append(ManifestRecord(int(parts[0]), parts[1], parts[2], parts[3], ids))
        return cls(records, os.path.dirname(os.path.abspath(path)))

    def load_sample(self, record: ManifestRecord) -> Sample:
        image = read_ppm(os.path.join(self.root, record.image_path))
        mask = read_pgm(os.path.join(self.root, record.mask_path))
        return Sample(image, mask, {"group_id": record.group_id, "class_ids": record.class_ids})

    def load_arrays(self, split: str):
        """Stack one split into uint8 images [N, H, W, 3] and masks [N, H, W]."""
        samples = [self.load_sample(r) for r in self.split(split)]
        if not samples:
            raise ValueError(f"split {split!r} is empty")
        return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])


# -- rendering -----------------------------------------------------------------

def _smooth_noise(rng, h, w, cells=4):
    grid = rng.standard_normal((cells + 1, cells + 1))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return (g00 * (1 - fx) + g01 * fx) * (1 - fy) + (g10 * (1 - fx) + g11 * fx) * fy


def _group_params(spec: GenSpec, group: int) -> Dict:
    rng = np.random.default_rng([spec.seed, 1, group])
    h, w = spec.image_size
    return {
        "center": (h / 2 + rng.uniform(-0.1, 0.1) * h, w / 2 + rng.uniform(-0.1, 0.1) * w),
        "pupil": rng.uniform(0.22, 0.32) * min(h, w),
        "iris": rng.uniform(0.42, 0.55) * min(h, w),
        "pupil_rgb": np.array([rng.uniform(70, 110), rng.uniform(20, 40), rng.uniform(15, 35)]),
        "iris_rgb": np.array([rng.uniform(150, 200), rng.uniform(70, 110), rng.uniform(50, 80)]),
        "sclera_rgb": np.array([rng.uniform(190, 225), rng.uniform(140, 170), rng.uniform(130, 160)]),
        "gain": rng.uniform(0.85, 1.1),
        "noise_seed": int(rng.integers(1 << 31)),
    }


def _background(spec: GenSpec, gp: Dict, rng) -> np.ndarray:
    h, w = spec.image_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r = np.hypot(yy - gp["center"][0], xx - gp["center"][1])
    t_pupil = np.clip((r - gp["pupil"]) / 3.0, 0, 1)[..., None]
    t_iris = np.clip((r - gp["iris"]) / 4.0, 0, 1)[..., None]
    img = gp["pupil_rgb"] * (1 - t_pupil) + gp["iris_rgb"] * t_pupil
    img = img * (1 - t_iris) + gp["sclera_rgb"] * t_iris
    # burst-shared texture plus a per-frame perturbation
    noise = _smooth_noise(np.random.default_rng(gp["noise_seed"]), h, w) * 12
    noise = noise + _smooth_noise(rng, h, w, cells=3) * 6
    vignette = 1.0 - 0.35 * (r / (0.75 * max(h, w))) ** 2
    img = (img + noise[..., None]) * vignette[..., None] * gp["gain"]
    return img


def _instrument_mask(h, w, tip_xy, angle, length, fam: InstrumentFamily):
    """Boolean coverage and a shading profile for one instrument.

    The instrument frame has ``u`` running from the tip (u=0) back along the
    shaft and ``v`` across it.
    """
    half = fam.width * min(h, w) / 2.0
    half = max(half, 0.75)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - tip_xy[0], yy - tip_xy[1]
    ca, sa = np.cos(angle), np.sin(angle)
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    tip_len = 3.0 * half
    shaft = (u >= 0) & (u <= length) & (np.abs(v) <= half)
    back = (u - length) ** 2 + v ** 2 <= half ** 2
    t = -u / tip_len  # 0 at shaft start, 1 at tip end
    in_tip = (u < 0) & (u >= -tip_len)
    if fam.tip == "wedge":
        tip = in_tip & (np.abs(v) <= half * (1 - t))
    elif fam.tip == "round":
        tip = u ** 2 + v ** 2 <= half ** 2
    elif fam.tip == "fork":
        tip = in_tip & (np.abs(v) <= half) & (np.abs(v) >= 0.35 * half)
    elif fam.tip == "hook":
        tip = (in_tip & (np.abs(v) <= 0.6 * half)) | ((u + tip_len) ** 2 + (v - 1.2 * half) ** 2 <= (0.9 * half) ** 2)
    else:  # blade: leaf wider than the shaft
        tip = in_tip & (np.abs(v) <= 1.7 * half * np.sqrt(np.clip(t * (1 - t) * 4, 0, 1)) + 0.5)
    cover = shaft | back | tip
    shade = 0.75 + 0.35 * np.cos(np.clip(np.abs(v) / (1.8 * half), 0, 1) * np.pi / 2)
    return cover, shade


def _draw_instruments(spec, rng, img, mask, classes, fg_target):
    h, w = spec.image_size
    poses = []
    share = fg_target * h * w / len(classes)
    for c in classes:
        fam = family(c)
        half = max(fam.width * min(h, w) / 2.0, 0.75)
        area = share * rng.uniform(0.8, 1.25)
        length = max(2.0, area / (2 * half) - 3.0 * half)
        # tip somewhere around the pupil, shaft leaving towards the periphery
        tip = (w / 2 + rng.uniform(-0.25, 0.25) * w, h / 2 + rng.uniform(-0.25, 0.25) * h)
        outward = np.arctan2(tip[1] - h / 2, tip[0] - w / 2)
        angle = outward + rng.uniform(-0.9, 0.9) if np.hypot(tip[0] - w / 2, tip[1] - h / 2) > 1 else rng.uniform(0, 2 * np.pi)
        cover, shade = _instrument_mask(h, w, tip, angle, length, fam)
        tint = fam.tint * rng.uniform(0.9, 1.05)
        img[cover] = (tint[None, :] * shade[cover][:, None])
        mask[cover] = c
        poses.append({"class_id": int(c), "tip": (float(tip[0]), float(tip[1])), "angle": float(angle),
                      "length": float(length)})
    return poses


def _draw_speculars(spec, rng, img, mask):
    h, w = spec.image_size
    lo, hi = spec.specular_count
    count = int(rng.integers(lo, hi + 1))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    fg = np.argwhere(mask > 0)
    for _ in range(count):
        if fg.size and rng.uniform() < 0.5:
            cy, cx = fg[rng.integers(len(fg))]
        else:
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        a = rng.uniform(*spec.specular_size) * min(h, w) + 0.5
        b = a * rng.uniform(0.4, 1.0)
        t = rng.uniform(0, np.pi)
        du, dv = xx - cx, yy - cy
        q = ((du * np.cos(t) + dv * np.sin(t)) / a) ** 2 + ((-du * np.sin(t) + dv * np.cos(t)) / b) ** 2
        alpha = np.clip(1.5 - q, 0, 1)[..., None]
        img[:] = img * (1 - alpha) + spec.specular_intensity * alpha


def render_sample(spec: GenSpec, index: int, group: int) -> Sample:
    """Render image ``index`` of burst ``group``; deterministic in (seed, index)."""
    h, w = spec.image_size
    gp = _group_params(spec, group)
    target = spec.foreground_ratio_target
    for attempt in range(64):
        rng = np.random.default_rng([spec.seed, 2, index, attempt])
        count = int(rng.integers(1, spec.max_instruments_per_image + 1))
        count = min(count, spec.num_instruments)
        classes = [int(c) + 1 for c in rng.choice(spec.num_instruments, size=count, replace=False)]
        img = _background(spec, gp, rng)
        mask = np.zeros((h, w), dtype=np.uint8)
        poses = _draw_instruments(spec, rng, img, mask, classes, target)
        present = sorted(int(c) for c in np.unique(mask) if c)
        frac = float((mask > 0).mean())
        if target / 3 <= frac <= 3 * target and present:
            break
    else:
        raise RuntimeError(f"could not hit foreground target {target} for image {index}")
    _draw_speculars(spec, rng, img, mask)
    image = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Sample(image, mask, {"group_id": group, "class_ids": tuple(present), "poses": poses, "index": index})


def generate(spec: GenSpec, out_dir, manifest_name: str = "manifest.tsv") -> DatasetManifest:
    """Render the dataset under ``out_dir`` and write its manifest."""
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    records = []
    train_groups = -(-spec.train_images // spec.group_size)
    jobs = [(i, i // spec.group_size, "train") for i in range(spec.train_images)]
    jobs += [(spec.train_images + j, train_groups + j // spec.group_size, "test") for j in range(spec.test_images)]
    train_samples = []
    for index, group, split in jobs:
        sample = render_sample(spec, index, group)
        records.append(_write(out_dir, f"{index:05d}", sample, group, split))
        if split == "train":
            train_samples.append(sample)
    for a in range(spec.num_augmented if train_samples else 0):
        pick = np.random.default_rng([spec.seed, 3, a])
        src = train_samples[int(pick.integers(len(train_samples)))]
        out = aug.random_augment(src, [spec.seed, 4, a], max_rotate=30.0, max_shift=0.1)
        ids = tuple(sorted(int(c) for c in np.unique(out.mask) if c))
        out.meta["class_ids"] = ids
        records.append(_write(out_dir, f"aug{a:05d}", out, src.meta["group_id"], "train"))
    manifest = DatasetManifest(records, os.path.abspath(out_dir))
    manifest.save(os.path.join(out_dir, manifest_name))
    return manifest


def _write(out_dir, stem, sample: Sample, group, split) -> ManifestRecord:
    image_rel = f"images/{stem}.ppm"
    mask_rel = f"masks/{stem}.pgm"
    write_ppm(os.path.join(out_dir, image_rel), sample.image)
    write_pgm(os.path.join(out_dir, mask_rel), sample.mask)
    return ManifestRecord(group, split, image_rel, mask_rel, tuple(sample.meta["class_ids"]))


def to_input(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 [N, H, W, 3] -> network input [N, 3, H, W] scaled to roughly [-1, 1]."""
    x = images.astype(dtype).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(x / dtype(127.5) - dtype(1.0))
