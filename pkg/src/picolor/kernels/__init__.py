"""Hot kernels with a compiled implementation and a numpy fallback.

The compiled extension is used when it was built (``pip install -e .`` or
``python setup.py build_ext --inplace``). Set ``PIC_KERNELS=numpy`` to force
the fallback; ``PIC_KERNELS=cython`` makes a missing extension an error.
"""

import os

import numpy as np

from . import _numpy

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _select(choice):
    if choice == "numpy":
        return _numpy
    if choice == "cython":
        if _ckernels is None:
            raise ImportError("PIC_KERNELS=cython but picolor.kernels._ckernels is not built")
        return _ckernels
    if choice in ("", "auto"):
        return _ckernels if _ckernels is not None else _numpy
    raise ValueError(f"PIC_KERNELS must be auto, numpy or cython, got {choice!r}")


backend = _select(os.environ.get("PIC_KERNELS", "auto").lower())
BACKEND = backend.NAME


def use(name):
    """Switch the active backend at runtime (``"numpy"``, ``"cython"`` or ``"auto"``)."""
    global backend, BACKEND
    backend = _select(name)
    BACKEND = backend.NAME
    return BACKEND


def available():
    return ["numpy"] + (["cython"] if _ckernels is not None else [])


def im2col(xp, kh, kw, stride, dilation, out_h, out_w):
    return backend.im2col(np.ascontiguousarray(xp), kh, kw, stride, dilation, out_h, out_w)


def col2im(cols, padded_shape, stride, dilation):
    return backend.col2im(np.ascontiguousarray(cols), tuple(padded_shape), stride, dilation)


def mixture_nll(params, a_bins, b_bins, n_levels, log_scale_floor, need_grad=True):
    return backend.mixture_nll(
        np.ascontiguousarray(params),
        np.ascontiguousarray(a_bins, dtype=np.int64),
        np.ascontiguousarray(b_bins, dtype=np.int64),
        int(n_levels),
        float(log_scale_floor),
        need_grad,
    )
