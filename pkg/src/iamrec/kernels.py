"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used if it is
missing or if ``IAMREC_PURE_PYTHON`` is set to a non-empty value other than
``0``.
"""

import os

from . import _kernels_py

CAUSAL = _kernels_py.CAUSAL
INTRA = _kernels_py.INTRA
INTER = _kernels_py.INTER


def _load():
    if os.environ.get("IAMREC_PURE_PYTHON", "0") not in ("", "0"):
        return _kernels_py, "python"
    try:
        from . import _ckernels
    except ImportError:
        return _kernels_py, "python"
    return _ckernels, "cython"


_impl, BACKEND = _load()

build_mask = _impl.build_mask
masked_softmax = _impl.masked_softmax
masked_softmax_backward = _impl.masked_softmax_backward
silu_forward = _impl.silu_forward
silu_backward = _impl.silu_backward
rmsnorm_forward = _impl.rmsnorm_forward
rmsnorm_backward = _impl.rmsnorm_backward
