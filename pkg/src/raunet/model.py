"""RAUNet: residual encoder, attention decoder with transposed-conv upsampling."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Tuple

import numpy as np

from raunet import ops
from raunet.attention import AugmentedAttention
from raunet.layers import BatchNorm2d, Conv2d, ConvTranspose2d, Module
from raunet.tensor import Precision, Tensor, elementwise, no_grad_tape

BASE_CHANNELS = (64, 64, 128, 256, 512)


@dataclass
class ModelConfig:
    num_classes: int = 11
    width_mult: float = 1.0
    block_counts: Tuple[int, int, int, int] = (3, 4, 6, 3)
    use_aam: bool = True
    input_size: Tuple[int, int] = (544, 960)

    def __post_init__(self):
        self.block_counts = tuple(int(b) for b in self.block_counts)
        self.input_size = tuple(int(s) for s in self.input_size)
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2 (background + instruments)")
        if self.width_mult <= 0:
            raise ValueError("width_mult must be positive")
        if len(self.block_counts) != 4 or min(self.block_counts) < 1:
            raise ValueError("block_counts needs four positive entries")
        if len(self.input_size) != 2 or any(s <= 0 or s % 32 for s in self.input_size):
            raise ValueError(f"input size {self.input_size} must be positive multiples of 32")

    @property
    def channels(self):
        return tuple(max(1, int(round(self.width_mult * c))) for c in BASE_CHANNELS)

    def to_dict(self):
        return asdict(self)


class BasicBlock(Module):
    def __init__(self, cin, cout, stride, *, rng, precision):
        self.conv1 = Conv2d(cin, cout, 3, stride, 1, bias=False, rng=rng, precision=precision)
        self.bn1 = BatchNorm2d(cout, precision=precision)
        self.conv2 = Conv2d(cout, cout, 3, 1, 1, bias=False, rng=rng, precision=precision)
        self.bn2 = BatchNorm2d(cout, precision=precision)
        if stride != 1 or cin != cout:
            self.down = Conv2d(cin, cout, 1, stride, 0, bias=False, rng=rng, precision=precision)
            self.down_bn = BatchNorm2d(cout, precision=precision)
        else:
            self.down = None

    def __call__(self, x):
        out = ops.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        shortcut = x if self.down is None else self.down_bn(self.down(x))
        return ops.relu(out + shortcut)


class Encoder(Module):
    """ResNet-34-shaped feature extractor returning skips at strides 2..32."""

    def __init__(self, channels, block_counts, *, rng, precision):
        c0 = channels[0]
        self.stem = Conv2d(3, c0, 7, 2, 3, bias=False, rng=rng, precision=precision)
        self.stem_bn = BatchNorm2d(c0, precision=precision)
        self.stages = []
        cin = c0
        for i, (cout, count) in enumerate(zip(channels[1:], block_counts)):
            stride = 1 if i == 0 else 2
            blocks = [BasicBlock(cin, cout, stride, rng=rng, precision=precision)]
            blocks += [BasicBlock(cout, cout, 1, rng=rng, precision=precision) for _ in range(count - 1)]
            self.stages.append(Stage(blocks))
            cin = cout

    def __call__(self, x):
        s2 = ops.relu(self.stem_bn(self.stem(x)))
        out = ops.maxpool2d(s2, 3, 2, 1)
        skips = [s2]
        for stage in self.stages:
            out = stage(out)
            skips.append(out)
        return skips


class Stage(Module):
    def __init__(self, blocks):
        self.blocks = blocks

    def __call__(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class UpStage(Module):
    """x2 transposed conv + BN + ReLU, projecting to the skip's channel count."""

    def __init__(self, cin, cout, *, rng, precision):
        self.up = ConvTranspose2d(cin, cout, 2, 2, bias=False, rng=rng, precision=precision)
        self.bn = BatchNorm2d(cout, precision=precision)

    def __call__(self, x):
        return ops.relu(self.bn(self.up(x)))


class Head(Module):
    def __init__(self, c, num_classes, *, rng, precision):
        self.up = UpStage(c, c, rng=rng, precision=precision)
        self.classifier = Conv2d(c, num_classes, 1, rng=rng, precision=precision)

    def __call__(self, x):
        return self.classifier(self.up(x))


class RaunetModel(Module):
    def __init__(self, config: ModelConfig, rng, precision=Precision.F32):
        self.config = config
        self.precision = precision
        ch = config.channels
        self.encoder = Encoder(ch, config.block_counts, rng=rng, precision=precision)
        # deep -> shallow: 512->256, 256->128, 128->64, 64->64 (at width 1)
        plan = [(ch[4], ch[3]), (ch[3], ch[2]), (ch[2], ch[1]), (ch[1], ch[0])]
        self.decoder = [UpStage(cin, cout, rng=rng, precision=precision) for cin, cout in plan]
        if config.use_aam:
            self.aam = [AugmentedAttention(cout, cout, rng=rng, precision=precision) for _, cout in plan]
        else:
            self.aam = []
        self.head = Head(ch[0], config.num_classes, rng=rng, precision=precision)

    def __call__(self, images: Tensor) -> Tensor:
        skips = self.encoder(images)
        x = skips[-1]
        for i, (up, skip) in enumerate(zip(self.decoder, reversed(skips[:-1]))):
            x = up(x)
            x = self.aam[i](x, skip) if self.aam else elementwise("add", x, skip)
        return self.head(x)


def build(config: ModelConfig, seed: int = 0, precision: Precision = Precision.F32) -> RaunetModel:
    """Allocate and He-initialize a model; identical seeds give identical weights."""
    return RaunetModel(config, np.random.default_rng(seed), precision)


def forward(model: RaunetModel, images, mode: str = "eval") -> Tensor:
    """Logits [N, K, H, W]. Eval mode uses running BN statistics and records nothing."""
    if not isinstance(images, Tensor):
        images = Tensor(images, precision=model.precision)
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != model.config.input_size:
        raise ValueError(f"expected images [N,3,{model.config.input_size[0]},{model.config.input_size[1]}],"
                         f" got {images.shape}")
    if mode == "train":
        model.train()
        return model(images)
    if mode != "eval":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    model.eval()
    with no_grad_tape():
        return model(images)


def count_params(model: RaunetModel) -> dict:
    """Trainable scalar counts grouped by component."""
    groups = {
        "encoder": model.encoder.num_params(),
        "decoder": sum(m.num_params() for m in model.decoder),
        "aam": sum(m.num_params() for m in model.aam),
        "head": model.head.num_params(),
    }
    groups["total"] = sum(groups.values())
    return groups
