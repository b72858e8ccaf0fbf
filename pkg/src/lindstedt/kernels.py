"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``LINDSTEDT_PURE_PYTHON=1`` to force the numpy implementation.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels.contract_batch

if os.environ.get("LINDSTEDT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels

        _impl = _ckernels.contract_batch
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        pass


def contract_batch(hidx, child_ptr, child_idx, props, apply_root, entry, offsets, tabK, tabC):
    """Dispatch to the selected backend (see ``_pykernels.contract_batch``)."""
    return _impl(
        np.ascontiguousarray(hidx, dtype=np.int64),
        np.ascontiguousarray(child_ptr, dtype=np.int64),
        np.ascontiguousarray(child_idx, dtype=np.int64),
        np.ascontiguousarray(props, dtype=np.complex128),
        bool(apply_root),
        int(entry),
        np.ascontiguousarray(offsets, dtype=np.int64),
        np.ascontiguousarray(tabK, dtype=np.complex128),
        np.ascontiguousarray(tabC, dtype=np.complex128),
    )


def python_contract_batch(*args):
    """The numpy implementation, whatever backend is active (for benchmarks)."""
    return _pykernels.contract_batch(*args)
