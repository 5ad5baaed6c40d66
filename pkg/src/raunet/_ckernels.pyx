# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; see ``_pykernels`` for the contract."""

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _extent(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad) nogil:
    return (size + 2 * pad - k) // stride + 1


def _im2col(real[:, :, :, ::1] x, real[:, ::1] out, Py_ssize_t kh, Py_ssize_t kw,
            Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = _extent(h, kh, stride, pad), wo = _extent(w, kw, stride, pad)
    cdef Py_ssize_t b, ch, i, j, oh, ow, row, col, ih, iw
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    col = 0
                    for b in range(n):
                        for oh in range(ho):
                            ih = oh * stride + i - pad
                            if ih < 0 or ih >= h:
                                for ow in range(wo):
                                    out[row, col] = 0
                                    col += 1
                                continue
                            for ow in range(wo):
                                iw = ow * stride + j - pad
                                if iw < 0 or iw >= w:
                                    out[row, col] = 0
                                else:
                                    out[row, col] = x[b, ch, ih, iw]
                                col += 1


def _col2im(real[:, ::1] cols, real[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
            Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = _extent(h, kh, stride, pad), wo = _extent(w, kw, stride, pad)
    cdef Py_ssize_t b, ch, i, j, oh, ow, row, col, ih, iw
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    col = 0
                    for b in range(n):
                        for oh in range(ho):
                            ih = oh * stride + i - pad
                            if ih < 0 or ih >= h:
                                col += wo
                                continue
                            for ow in range(wo):
                                iw = ow * stride + j - pad
                                if iw >= 0 and iw < w:
                                    x[b, ch, ih, iw] += cols[row, col]
                                col += 1


def _maxpool_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] out, cnp.int64_t[:, :, :, ::1] arg,
                     Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t b, ch, oh, ow, i, j, ih, iw, best_idx, base
    cdef real best, v
    cdef bint found
    with nogil:
        for b in range(n):
            for ch in range(c):
                base = (b * c + ch) * h * w
                for oh in range(ho):
                    for ow in range(wo):
                        found = False
                        best = 0
                        best_idx = 0
                        for i in range(k):
                            ih = oh * stride + i - pad
                            if ih < 0 or ih >= h:
                                continue
                            for j in range(k):
                                iw = ow * stride + j - pad
                                if iw < 0 or iw >= w:
                                    continue
                                v = x[b, ch, ih, iw]
                                if not found or v > best:
                                    best = v
                                    best_idx = ih * w + iw
                                    found = True
                        out[b, ch, oh, ow] = best
                        arg[b, ch, oh, ow] = base + best_idx


def _maxpool_backward(real[::1] grad, cnp.int64_t[::1] arg, real[::1] dx):
    cdef Py_ssize_t m = grad.shape[0], t
    with nogil:
        for t in range(m):
            dx[arg[t]] += grad[t]


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = _extent(h, kh, stride, pad)
    wo = _extent(w, kw, stride, pad)
    x = np.ascontiguousarray(x)
    out = np.empty((c * kh * kw, n * ho * wo), dtype=x.dtype)
    _im2col(x, out, kh, kw, stride, pad)
    return out


def col2im(cols, x_shape, kh, kw, stride, pad):
    cols = np.ascontiguousarray(cols)
    x = np.zeros(x_shape, dtype=cols.dtype)
    _col2im(cols, x, kh, kw, stride, pad)
    return x


def maxpool_forward(x, k, stride, pad):
    n, c, h, w = x.shape
    x = np.ascontiguousarray(x)
    out = np.empty((n, c, _extent(h, k, stride, pad), _extent(w, k, stride, pad)), dtype=x.dtype)
    arg = np.empty(out.shape, dtype=np.int64)
    _maxpool_forward(x, out, arg, k, stride, pad)
    return out, arg


def maxpool_backward(grad, argmax, x_shape):
    grad = np.ascontiguousarray(grad)
    dx = np.zeros(int(np.prod(x_shape)), dtype=grad.dtype)
    _maxpool_backward(grad.ravel(), np.ascontiguousarray(argmax).ravel(), dx)
    return dx.reshape(x_shape)
