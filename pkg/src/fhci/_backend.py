"""Kernel backend selection.

The compiled extension ``fhci._core`` is preferred when importable; the
pure-Python twin ``fhci._pykernel`` is the fallback. FHCI_BACKEND can
force either ("compiled" or "python"). Library code must look the
backend up through :func:`backend` at call time so tests can swap it.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernel

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_forced = os.environ.get("FHCI_BACKEND", "").strip().lower()
if _forced == "python":
    BACKEND = _pykernel
elif _forced == "compiled":
    if _core is None:
        raise ImportError(
            "FHCI_BACKEND=compiled but the fhci._core extension is not available"
        )
    BACKEND = _core
elif _forced:
    raise ImportError(f"unknown FHCI_BACKEND value: {_forced!r}")
else:
    BACKEND = _core if _core is not None else _pykernel

KIND_CODES = {
    "reml": _pykernel.KIND_REML,
    "li-lahiri": _pykernel.KIND_LL,
    "yl-gls": _pykernel.KIND_YL_GLS,
    "yl-ols": _pykernel.KIND_YL_OLS,
}


def backend():
    return BACKEND


def backend_name() -> str:
    return "compiled" if BACKEND is _core else "python"


def context_inputs(d: np.ndarray, x: np.ndarray):
    """Derived design constants consumed by both kernel backends.

    Computed once per dataset so the two backends see identical values:
    (X'X)^-1, level-2 leverages q_i, the per-area constant part of the
    ols variance sandwich x_i'(X'X)^-1 X' diag(D) X (X'X)^-1 x_i, and
    tr[(I - X(X'X)^-1X') diag(D)].
    """
    d = np.ascontiguousarray(d, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    xtx = x.T @ x
    xtx_inv = np.linalg.inv(xtx)
    hat = x @ xtx_inv @ x.T
    q = np.einsum("ii->i", hat).copy()
    s0 = (hat * hat) @ d
    tr_ihd = float(np.sum((1.0 - q) * d))
    mean_d = float(d.sum() / len(d))
    return xtx_inv, q, s0, tr_ihd, mean_d


def make_context(d: np.ndarray, x: np.ndarray, backend_module=None):
    """Kernel context for (D, X) on the requested (or active) backend."""
    mod = backend_module if backend_module is not None else BACKEND
    xtx_inv, q, s0, tr_ihd, mean_d = context_inputs(d, x)
    return mod.make_context(d, x, xtx_inv, q, s0, tr_ihd, mean_d)


def context_for(dataset):
    """Cached kernel context for a dataset, keyed by backend module."""
    cache = getattr(dataset, "_kernel_ctx_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(dataset, "_kernel_ctx_cache", cache)
    key = id(BACKEND)
    ctx = cache.get(key)
    if ctx is None:
        ctx = make_context(dataset.D, dataset.X)
        cache[key] = ctx
    return ctx
