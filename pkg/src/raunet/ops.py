"""Neural-network operators with hand-written backward passes."""

from __future__ import annotations

from typing import Optional

import numpy as np

from raunet import kernels
from raunet.tensor import Tensor, check_same_precision, make_result


def _out_extent(size, k, stride, pad, what="conv2d"):
    out = (size + 2 * pad - k) // stride + 1
    if out < 1 or size + 2 * pad < k:
        raise ValueError(f"{what}: non-positive output extent (size={size}, k={k}, stride={stride}, pad={pad})")
    return out


def _check4d(x: Tensor, what: str):
    if x.ndim != 4:
        raise ValueError(f"{what} expects [N,C,H,W], got {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [N,Cin,H,W] with ``weight`` [Cout,Cin,kH,kW], zero padding."""
    _check4d(x, "conv2d")
    inputs = (x, weight) if bias is None else (x, weight, bias)
    check_same_precision(*inputs)
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    ho = _out_extent(h, kh, stride, padding)
    wo = _out_extent(w, kw, stride, padding)

    pointwise = kh == kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = x.data.transpose(1, 0, 2, 3).reshape(cin, n * h * w)
    else:
        cols = kernels.im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3))

    def grad_fn(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        gw = (gmat @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = wmat.T @ gmat
            if pointwise:
                gx = np.ascontiguousarray(dcols.reshape(cin, n, h, w).transpose(1, 0, 2, 3))
            else:
                gx = kernels.col2im(dcols, x.shape, kh, kw, stride, padding)
        if bias is None:
            return gx, gw
        return gx, gw, gmat.sum(axis=1)

    return make_result("conv2d", out, inputs, grad_fn)


def transposed_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 2,
                      padding: int = 0) -> Tensor:
    """Upsample ``x`` [N,Cin,H,W] by exactly ``stride`` with ``weight`` [Cin,Cout,kH,kW].

    This is the adjoint of :func:`conv2d` with the same kernel: the forward pass
    equals conv2d's input gradient. Only configurations with ``k - 2*padding ==
    stride`` are accepted, which makes the output ``[N,Cout,stride*H,stride*W]``.
    """
    _check4d(x, "transposed_conv2d")
    inputs = (x, weight) if bias is None else (x, weight, bias)
    check_same_precision(*inputs)
    n, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(f"transposed_conv2d: input has {cin} channels, weight expects {wcin}")
    if kh - 2 * padding != stride or kw - 2 * padding != stride:
        raise ValueError(f"transposed_conv2d: k={kh}x{kw}, stride={stride}, pad={padding} "
                         "does not upsample by exactly the stride")
    ho, wo = stride * h, stride * w
    out_shape = (n, cout, ho, wo)

    xmat = x.data.transpose(1, 0, 2, 3).reshape(cin, n * h * w)
    wmat = weight.data.reshape(cin, cout * kh * kw)
    out = kernels.col2im(wmat.T @ xmat, out_shape, kh, kw, stride, padding)
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1)

    def grad_fn(g):
        gcols = kernels.im2col(g, kh, kw, stride, padding)
        gx = gw = None
        if x.requires_grad:
            gx = np.ascontiguousarray((wmat @ gcols).reshape(cin, n, h, w).transpose(1, 0, 2, 3))
        if weight.requires_grad:
            gw = (xmat @ gcols.T).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_result("transposed_conv2d", out, inputs, grad_fn)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    In training mode the batch statistics normalize the input and the running
    buffers are updated in place (unbiased variance, like most frameworks).
    In eval mode the running statistics are used.
    """
    _check4d(x, "batchnorm2d")
    check_same_precision(x, gamma, beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batchnorm2d: {c} channels but gamma/beta shaped {gamma.shape}/{beta.shape}")
    axes = (0, 2, 3)
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if training:
        if count == 1:
            raise ValueError("batchnorm2d: train mode needs more than one value per channel")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (count / (count - 1))
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def grad_fn(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(1, c, 1, 1)
        if training:
            gx = (inv_std.reshape(1, c, 1, 1) / count) * (
                count * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv_std.reshape(1, c, 1, 1)
        return gx, ggamma, gbeta

    return make_result("batchnorm2d", out, (x, gamma, beta), grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result("relu", x.data * mask, (x,), lambda g: (g * mask,))


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1 of an [N,C,...] tensor, max-shifted for stability."""
    if x.ndim < 2:
        raise ValueError("softmax_channels expects [N,C,...]")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return make_result("softmax_channels", s, (x,), grad_fn)


def maxpool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    """Window max; the gradient goes to the first (row-major) maximum of each window."""
    _check4d(x, "maxpool2d")
    if k < 1 or stride < 1 or padding < 0 or 2 * padding > k:
        raise ValueError(f"maxpool2d: invalid geometry k={k}, stride={stride}, pad={padding}")
    _out_extent(x.shape[2], k, stride, padding, "maxpool2d")
    _out_extent(x.shape[3], k, stride, padding, "maxpool2d")
    out, arg = kernels.maxpool_forward(x.data, k, stride, padding)
    shape = x.shape
    return make_result("maxpool2d", out, (x,), lambda g: (kernels.maxpool_backward(g, arg, shape),))


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: [N,C,H,W] -> [N,C]."""
    _check4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    area = h * w
    out = x.data.mean(axis=(2, 3))

    def grad_fn(g):
        return (np.broadcast_to((g / area)[:, :, None, None], x.shape).copy(),)

    return make_result("global_avg_pool", out, (x,), grad_fn)
