"""Parameter-holding layers built on :mod:`raunet.ops`."""

from __future__ import annotations

import numpy as np

from raunet import ops
from raunet.tensor import Precision, Tensor


class Module:
    """Minimal container: discovers parameters and buffers by attribute walk."""

    training = True

    def _children(self):
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_tensors(self, prefix=""):
        """Yield (name, Tensor) for parameters and buffers, in a stable order."""
        for key, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + key, value
        for key, child in self._children():
            yield from child.named_tensors(f"{prefix}{key}.")

    def named_parameters(self, prefix=""):
        for name, t in self.named_tensors(prefix):
            if t.requires_grad:
                yield name, t

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def num_params(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)


def he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, padding=0, bias=True, *, rng, precision=Precision.F32):
        dtype = precision.dtype
        self.stride, self.padding = stride, padding
        self.weight = Tensor(he_uniform(rng, (cout, cin, k, k), cin * k * k, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    """Exact x``stride`` upsampling; weight layout [Cin, Cout, k, k]."""

    def __init__(self, cin, cout, k=2, stride=2, padding=0, bias=True, *, rng, precision=Precision.F32):
        dtype = precision.dtype
        self.stride, self.padding = stride, padding
        fan_in = max(1.0, cin * k * k / (stride * stride))
        self.weight = Tensor(he_uniform(rng, (cin, cout, k, k), fan_in, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        return ops.transposed_conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, c, momentum=0.1, eps=1e-5, *, precision=Precision.F32):
        dtype = precision.dtype
        self.momentum, self.eps = momentum, eps
        self.gamma = Tensor(np.ones(c, dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype), requires_grad=True)
        self.running_mean = Tensor(np.zeros(c, dtype))
        self.running_var = Tensor(np.ones(c, dtype))

    def __call__(self, x):
        return ops.batchnorm2d(x, self.gamma, self.beta, self.running_mean.data, self.running_var.data,
                               self.training, self.momentum, self.eps)
