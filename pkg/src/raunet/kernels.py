"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is loaded. Setting ``RAUNET_KERNELS=python`` forces the fallback.
"""

import os

from raunet import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("RAUNET_KERNELS", "").lower() != "python":
    try:
        from raunet import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        pass

im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
out_extent = _pykernels.out_extent


def backends():
    """Return the kernel modules importable in this environment, keyed by name."""
    found = {"python": _pykernels}
    try:
        from raunet import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
