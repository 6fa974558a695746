"""Backend selection for the posterior kernels.

The compiled extension is used when importable; set ``MAMP_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("MAMP_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on build
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def _as_c128(r):
    return np.ascontiguousarray(r, dtype=np.complex128).reshape(-1)


def bg_posterior(r, v, mu, backend=None):
    """Return (posterior mean, posterior variance) for 0 < mu < 1."""
    impl = _pick(backend)
    arr = np.asarray(r)
    mean, var = impl.bg_posterior(_as_c128(arr), float(v), float(mu))
    return np.asarray(mean).reshape(arr.shape), np.asarray(var).reshape(arr.shape)


def bg_mean(r, v, mu, backend=None):
    impl = _pick(backend)
    arr = np.asarray(r)
    return np.asarray(impl.bg_mean(_as_c128(arr), float(v), float(mu))).reshape(arr.shape)


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        if BACKEND != "cython":
            raise RuntimeError("compiled kernels are not available")
        return _impl
    raise ValueError(f"unknown backend {backend!r}")
