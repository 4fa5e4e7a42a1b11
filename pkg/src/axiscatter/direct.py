"""Direct O(N M) summation of the combined-field kernel.

Uses the compiled extension when it is importable, otherwise the numpy
fallback.  Set ``AXISCATTER_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _direct_py

BACKEND = "python"
_impl = _direct_py
if os.environ.get("AXISCATTER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _direct as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _direct_py

_threads = 1


def set_threads(n: int) -> None:
    global _threads
    _threads = max(1, int(n))


def _backend(impl):
    if impl is None:
        return _impl
    if impl == "python":
        return _direct_py
    if impl == "compiled":
        if BACKEND != "compiled":
            raise RuntimeError("compiled direct-sum extension is not available")
        return _impl
    return impl


def _prep(a, dtype=float):
    return np.ascontiguousarray(a, dtype=dtype)


def direct_sum(targets, sources, normals, charge, kappa: float, coupling: complex,
               tgt_ids=None, src_ids=None, impl=None) -> np.ndarray:
    """``out_i = sum_j G(x_i, y_j) charge_j``, skipping pairs with equal ids.

    ``charge`` is the density already multiplied by quadrature weights; it may
    be a vector or an ``(n, k)`` block.  Ids default to "never equal".
    """
    impl = _backend(impl)
    targets, sources, normals = _prep(targets), _prep(sources), _prep(normals)
    m, n = targets.shape[0], sources.shape[0]
    tgt_ids = _prep(np.full(m, -1) if tgt_ids is None else tgt_ids, np.int_)
    src_ids = _prep(np.full(n, -2) if src_ids is None else src_ids, np.int_)
    charge = np.asarray(charge, complex)
    if charge.ndim == 1:
        return impl.direct_sum(targets, tgt_ids, sources, normals, src_ids, _prep(charge, complex),
                               float(kappa), complex(coupling), _threads)
    cols = [impl.direct_sum(targets, tgt_ids, sources, normals, src_ids,
                            _prep(charge[:, c], complex), float(kappa), complex(coupling), _threads)
            for c in range(charge.shape[1])]
    return np.stack(cols, axis=1)


def dense_block(targets, sources, normals, kappa: float, coupling: complex, impl=None) -> np.ndarray:
    """Kernel matrix ``K[i, j] = G(x_i, y_j)`` (no quadrature weights)."""
    impl = _backend(impl)
    return impl.dense_block(_prep(targets), _prep(sources), _prep(normals), float(kappa),
                            complex(coupling), _threads)
