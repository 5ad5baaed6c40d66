"""Central finite-difference gradient checks at float64.

Each case builds a scalar ``loss = sum(op(inputs) * R)`` with a fixed random
projection ``R`` and compares the tape gradient of every input against

    (loss(x + h e_i) - loss(x - h e_i)) / 2h

using the error measure ``|analytic - numeric| / max(1, |analytic|)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from raunet import ops
from raunet.attention import AugmentedAttention, aam_fuse
from raunet.losses import cel_dice, cross_entropy, soft_dice, LossConfig
from raunet.tensor import Precision, Tape, Tensor, backward, elementwise, reduce_sum

STEP = 1e-5
TOLERANCE = {"batchnorm2d": 1e-4}
DEFAULT_TOLERANCE = 1e-5


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic)), initial=0.0))


def check_gradients(fn: Callable[..., Tensor], arrays: List[np.ndarray], step: float = STEP) -> float:
    """Max relative error between tape and finite-difference gradients of ``fn``.

    ``fn`` takes one Tensor per array and returns a scalar Tensor.
    """
    params = [Tensor(a, requires_grad=True, precision=Precision.F64) for a in arrays]
    with Tape() as tape:
        loss = fn(*params)
    backward(loss, tape)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = fn(*params).item()
            flat[i] = orig - step
            minus = fn(*params).item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (plus - minus) / (2 * step)
        worst = max(worst, rel_error(analytic, numeric))
    return worst


def _projected(op_out: Tensor, rng) -> Tensor:
    proj = Tensor(rng.standard_normal(op_out.shape), precision=Precision.F64)
    return reduce_sum(elementwise("mul", op_out, proj))


def _extents(rng, n, lo=1, hi=5):
    return [int(v) for v in rng.integers(lo, hi + 1, size=n)]


def _away_from_zero(rng, shape, margin=1e-3):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, margin * 10 * np.sign(x + 1e-12), x)


def _distinct(rng, shape, gap=1e-3):
    """Random values whose pairwise gaps exceed ``gap`` (keeps window maxima unique)."""
    size = int(np.prod(shape))
    vals = rng.permutation(size) * (10 * gap) + rng.uniform(0, gap, size)
    return vals.reshape(shape)


# Each case builder returns (fn, arrays) for one random configuration.

def _fixed_projection(seed):
    """Projection that is identical across repeated forward calls."""
    def project(out):
        return _projected(out, np.random.default_rng(seed))
    return project


def _case_conv(rng):
    n, cin, cout = _extents(rng, 3, 1, 3)
    k = int(rng.choice([1, 2, 3]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, k))
    h, w = (int(v) for v in rng.integers(k, 6, size=2))
    project = _fixed_projection(int(rng.integers(1 << 30)))
    arrays = [rng.standard_normal((n, cin, h, w)), rng.standard_normal((cout, cin, k, k)),
              rng.standard_normal(cout)]
    return (lambda x, wt, b: project(ops.conv2d(x, wt, b, stride, pad))), arrays


def _case_tconv(rng):
    n, cin, cout = _extents(rng, 3, 1, 3)
    stride = int(rng.choice([1, 2, 3]))
    pad = int(rng.integers(0, 2))
    k = stride + 2 * pad
    h, w = _extents(rng, 2, 1, 4)
    project = _fixed_projection(int(rng.integers(1 << 30)))
    arrays = [rng.standard_normal((n, cin, h, w)), rng.standard_normal((cin, cout, k, k)),
              rng.standard_normal(cout)]
    return (lambda x, wt, b: project(ops.transposed_conv2d(x, wt, b, stride, pad))), arrays


def _case_batchnorm(rng):
    n, c, h, w = _extents(rng, 4, 1, 4)
    if n * h * w == 1:
        n = 2
    project = _fixed_projection(int(rng.integers(1 << 30)))
    x = rng.standard_normal((n, c, h, w)) * 2 + 0.5
    gamma = rng.uniform(0.5, 1.5, c)
    beta = rng.standard_normal(c)

    def fn(x, g, b):
        return project(ops.batchnorm2d(x, g, b, np.zeros(c), np.ones(c), training=True))

    return fn, [x, gamma, beta]


def _case_batchnorm_eval(rng):
    n, c, h, w = _extents(rng, 4, 1, 4)
    project = _fixed_projection(int(rng.integers(1 << 30)))
    mean, var = rng.standard_normal(c), rng.uniform(0.5, 2.0, c)

    def fn(x, g, b):
        return project(ops.batchnorm2d(x, g, b, mean.copy(), var.copy(), training=False))

    return fn, [rng.standard_normal((n, c, h, w)), rng.uniform(0.5, 1.5, c), rng.standard_normal(c)]


def _case_relu(rng):
    shape = tuple(_extents(rng, 4, 1, 5))
    project = _fixed_projection(int(rng.integers(1 << 30)))
    return (lambda x: project(ops.relu(x))), [_away_from_zero(rng, shape)]


def _case_softmax(rng):
    shape = tuple(_extents(rng, 4, 1, 5))
    project = _fixed_projection(int(rng.integers(1 << 30)))
    return (lambda x: project(ops.softmax_channels(x))), [rng.standard_normal(shape) * 2]


def _case_maxpool(rng):
    n, c = _extents(rng, 2, 1, 3)
    k = int(rng.choice([2, 3]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, k // 2 + 1))
    h, w = (int(v) for v in rng.integers(k, 6, size=2))
    project = _fixed_projection(int(rng.integers(1 << 30)))
    return (lambda x: project(ops.maxpool2d(x, k, stride, pad))), [_distinct(rng, (n, c, h, w))]


def _case_gap(rng):
    shape = tuple(_extents(rng, 4, 1, 5))
    project = _fixed_projection(int(rng.integers(1 << 30)))
    return (lambda x: project(ops.global_avg_pool(x))), [rng.standard_normal(shape)]


def _case_aam(rng):
    n = int(rng.integers(2, 4))
    c_high, c_low, c_attn = _extents(rng, 3, 1, 4)
    h, w = _extents(rng, 2, 1, 3)
    module = AugmentedAttention(c_high, c_low, c_attn, rng=rng, precision=Precision.F64)
    names = ["w_alpha", "w_beta", "w_phi"]
    project = _fixed_projection(int(rng.integers(1 << 30)))
    high = rng.standard_normal((n, c_high, h, w))
    low = rng.standard_normal((n, c_low, h, w))
    if c_high != c_low:
        # fusion adds the high-level map, so it must already carry C_low channels
        high_fuse = rng.standard_normal((n, c_low, h, w))
    else:
        high_fuse = None
    weights = [getattr(module, nm).weight.data.copy() for nm in names]
    biases = [getattr(module, nm).bias.data.copy() for nm in names]

    def fn(x, y, wa, ba, wb, bb, wp, bp, gamma, beta):
        for nm, wt, bs in zip(names, (wa, wb, wp), (ba, bb, bp)):
            getattr(module, nm).weight = wt
            getattr(module, nm).bias = bs
        module.bn_phi.gamma, module.bn_phi.beta = gamma, beta
        a = module.vector(x, y)
        target = x if high_fuse is None else Tensor(high_fuse, precision=Precision.F64)
        return project(aam_fuse(target, y, a))

    arrays = [high, low, weights[0], biases[0], weights[1], biases[1], weights[2], biases[2],
              rng.uniform(0.5, 1.5, c_low), rng.standard_normal(c_low) * 0.1]
    return fn, arrays


def _logits_and_target(rng):
    n, k, h, w = _extents(rng, 4, 1, 4)
    k = max(k, 2)
    return rng.standard_normal((n, k, h, w)) * 1.5, rng.integers(0, k, size=(n, h, w))


def _case_ce(rng):
    logits, target = _logits_and_target(rng)
    return (lambda z: cross_entropy(z, target)), [logits]


def _case_dice(rng):
    logits, target = _logits_and_target(rng)
    binary = bool(rng.integers(0, 2))
    return (lambda z: soft_dice(ops.softmax_channels(z), target, binary=binary)), [logits]


def _case_celdice(rng):
    logits, target = _logits_and_target(rng)
    cfg = LossConfig(alpha=float(rng.uniform(0, 1)))
    return (lambda z: cel_dice(z, target, cfg)), [logits]


CASES: Dict[str, Callable] = {
    "conv2d": _case_conv,
    "transposed_conv2d": _case_tconv,
    "batchnorm2d": _case_batchnorm,
    "batchnorm2d_eval": _case_batchnorm_eval,
    "relu": _case_relu,
    "softmax_channels": _case_softmax,
    "maxpool2d": _case_maxpool,
    "global_avg_pool": _case_gap,
    "aam": _case_aam,
    "cross_entropy": _case_ce,
    "soft_dice": _case_dice,
    "cel_dice": _case_celdice,
}


@dataclass
class CheckResult:
    op: str
    cases: int
    max_rel_err: float
    tolerance: float
    seconds: float

    @property
    def ok(self):
        return self.max_rel_err < self.tolerance


def tolerance_for(op: str) -> float:
    return TOLERANCE.get(op.split("_eval")[0], DEFAULT_TOLERANCE)


def run_suite(cases_per_op: int = 20, seed: int = 0, ops_subset=None) -> List[CheckResult]:
    """Run every registered case ``cases_per_op`` times with fresh random shapes."""
    results = []
    for op, builder in CASES.items():
        if ops_subset and op not in ops_subset:
            continue
        rng = np.random.default_rng([seed, sum(map(ord, op))])
        start = time.perf_counter()
        worst = 0.0
        for _ in range(cases_per_op):
            fn, arrays = builder(rng)
            worst = max(worst, check_gradients(fn, arrays))
        results.append(CheckResult(op, cases_per_op, worst, tolerance_for(op), time.perf_counter() - start))
    return results
