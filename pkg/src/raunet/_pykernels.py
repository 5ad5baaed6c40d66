"""Pure-numpy implementations of the hot kernels.

These are the reference fallback for :mod:`raunet._ckernels`. Both modules
expose the same four functions with identical semantics:

* ``im2col(x, kh, kw, stride, pad)`` -> ``[C*kh*kw, N*Ho*Wo]``
* ``col2im(cols, x_shape, kh, kw, stride, pad)`` -> ``[N, C, H, W]`` (scatter-add)
* ``maxpool_forward(x, k, stride, pad)`` -> ``(out, argmax)``
* ``maxpool_backward(grad, argmax, x_shape)`` -> ``dx``

Rows of the column matrix are ordered ``(c, i, j)`` and columns ``(n, oh, ow)``.
``argmax`` holds flat indices into the *unpadded* input.
"""

import numpy as np


def out_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = out_extent(h, kh, stride, pad)
    wo = out_extent(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    xt = x.transpose(1, 0, 2, 3)
    for i in range(kh):
        i_end = i + stride * ho
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i_end:stride, j:j + stride * wo:stride]
    return cols.reshape(c * kh * kw, n * ho * wo)


def col2im(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    ho = out_extent(h, kh, stride, pad)
    wo = out_extent(w, kw, stride, pad)
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    xp = np.zeros((c, n, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        i_end = i + stride * ho
        for j in range(kw):
            xp[:, :, i:i_end:stride, j:j + stride * wo:stride] += cols[:, i, j]
    x = xp[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(x)


def maxpool_forward(x, k, stride, pad):
    n, c, h, w = x.shape
    ho = out_extent(h, k, stride, pad)
    wo = out_extent(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    # flat index of every padded position into the unpadded plane
    rows = np.arange(h + 2 * pad) - pad
    cols = np.arange(w + 2 * pad) - pad
    flat = rows[:, None] * w + cols[None, :]

    best = np.full((n, c, ho, wo), -np.inf, dtype=x.dtype)
    arg = np.zeros((n, c, ho, wo), dtype=np.int64)
    for i in range(k):
        for j in range(k):
            win = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            idx = flat[i:i + stride * ho:stride, j:j + stride * wo:stride]
            take = win > best  # strict: first maximum in row-major window order wins
            best = np.where(take, win, best)
            arg = np.where(take, idx, arg)
    plane = np.arange(n * c, dtype=np.int64).reshape(n, c, 1, 1) * (h * w)
    return best, arg + plane


def maxpool_backward(grad, argmax, x_shape):
    size = int(np.prod(x_shape))
    dx = np.bincount(argmax.ravel(), weights=grad.ravel(), minlength=size)
    return dx.astype(grad.dtype, copy=False).reshape(x_shape)
