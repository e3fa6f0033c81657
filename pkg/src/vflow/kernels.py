"""Mixture-of-logistics kernels, compiled when available.

The Cython build (``_mixlogistic_ext``) is used unless it failed to build or
``VFLOW_PURE_PYTHON=1`` is set, in which case the numpy implementation in
``_mixlogistic_py`` is used. Both expose the same four functions.
"""

import os

import numpy as np

from . import _mixlogistic_py

if os.environ.get("VFLOW_PURE_PYTHON", "") not in ("", "0"):
    _impl = _mixlogistic_py
else:
    try:
        from . import _mixlogistic_ext as _impl
    except ImportError:  # extension not built
        _impl = _mixlogistic_py

BACKEND = "cython" if _impl is not _mixlogistic_py else "python"
LO, HI = _mixlogistic_py.LO, _mixlogistic_py.HI


def _c(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    # typed memoryviews in the extension need writable buffers
    return a if a.flags.writeable else a.copy()


def backend_module(name: str | None = None):
    if name is None:
        return _impl
    if name == "python":
        return _mixlogistic_py
    if name == "cython":
        from . import _mixlogistic_ext

        return _mixlogistic_ext
    raise ValueError(f"unknown backend {name!r}")


def mix_cdf(x, logits, means, log_scales):
    return _impl.mix_cdf(_c(x), _c(logits), _c(means), _c(log_scales))


def mix_transform(x, logits, means, log_scales):
    return _impl.mix_transform(_c(x), _c(logits), _c(means), _c(log_scales))


def mix_transform_grad(x, logits, means, log_scales, gw, gld):
    return _impl.mix_transform_grad(
        _c(x), _c(logits), _c(means), _c(log_scales), _c(gw), _c(gld)
    )


def mix_transform_inverse(w, logits, means, log_scales, tol=1e-12, max_iter=200):
    return _impl.mix_transform_inverse(
        _c(w), _c(logits), _c(means), _c(log_scales), tol, max_iter
    )
