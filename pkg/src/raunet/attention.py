"""Augmented attention module: channel attention for decoder skip fusion.

The attentive vector is built from the global context of both inputs::

    fa = relu(W_a * gap(high) + b_a) + relu(W_b * gap(low) + b_b)
    a  = softmax(bn(W_p * fa + b_p))

and the skip features are reweighted channel-wise before being added to the
decoder features: ``out = low * a + high``.
"""

from __future__ import annotations

from raunet import ops
from raunet.layers import BatchNorm2d, Conv2d, Module
from raunet.tensor import Precision, Tensor, elementwise, reshape


def aam_vector(x_high: Tensor, y_low: Tensor, w_alpha: Conv2d, w_beta: Conv2d, w_phi: Conv2d,
               bn_phi: BatchNorm2d) -> Tensor:
    """Return the attentive vector [N, C_low] (softmax over channels)."""
    if x_high.ndim != 4 or y_low.ndim != 4:
        raise ValueError("aam_vector expects [N,C,H,W] inputs")
    if x_high.shape[0] != y_low.shape[0] or x_high.shape[2:] != y_low.shape[2:]:
        raise ValueError(f"aam_vector: high {x_high.shape} and low {y_low.shape} disagree in N/H/W")
    if w_alpha.weight.shape[1] != x_high.shape[1] or w_beta.weight.shape[1] != y_low.shape[1]:
        raise ValueError("aam_vector: channel count does not match attention parameters")
    if w_phi.weight.shape[0] != y_low.shape[1]:
        raise ValueError("aam_vector: attention output width must equal low-level channels")
    n = x_high.shape[0]
    gx = reshape(ops.global_avg_pool(x_high), (n, x_high.shape[1], 1, 1))
    gy = reshape(ops.global_avg_pool(y_low), (n, y_low.shape[1], 1, 1))
    fa = ops.relu(w_alpha(gx)) + ops.relu(w_beta(gy))
    a = ops.softmax_channels(bn_phi(w_phi(fa)))
    return reshape(a, (n, y_low.shape[1]))


def aam_fuse(x_high: Tensor, y_low: Tensor, a: Tensor) -> Tensor:
    """``y_low * a + x_high`` with ``a`` [N,C] broadcast over H and W."""
    if x_high.shape != y_low.shape:
        raise ValueError(f"aam_fuse: high {x_high.shape} vs low {y_low.shape}")
    n, c = y_low.shape[:2]
    if a.shape != (n, c):
        raise ValueError(f"aam_fuse: attentive vector {a.shape}, expected {(n, c)}")
    weighted = elementwise("mul", y_low, reshape(a, (n, c, 1, 1)))
    return elementwise("add", weighted, x_high)


class AugmentedAttention(Module):
    """Holds the three 1x1 projections and the batch norm of one decoder stage."""

    def __init__(self, c_high, c_low, c_attn=None, *, rng, precision=Precision.F32):
        c_attn = c_low if c_attn is None else c_attn
        self.w_alpha = Conv2d(c_high, c_attn, 1, rng=rng, precision=precision)
        self.w_beta = Conv2d(c_low, c_attn, 1, rng=rng, precision=precision)
        self.w_phi = Conv2d(c_attn, c_low, 1, rng=rng, precision=precision)
        self.bn_phi = BatchNorm2d(c_low, precision=precision)

    def vector(self, x_high, y_low):
        return aam_vector(x_high, y_low, self.w_alpha, self.w_beta, self.w_phi, self.bn_phi)

    def __call__(self, x_high, y_low):
        return aam_fuse(x_high, y_low, self.vector(x_high, y_low))


def aam_param_count(c_high, c_low, c_attn=None) -> int:
    """Closed-form scalar count of one module (weights, biases, BN affine)."""
    c_attn = c_low if c_attn is None else c_attn
    weights = c_high * c_attn + c_low * c_attn + c_attn * c_low
    biases = c_attn + c_attn + c_low
    return weights + biases + 2 * c_low
