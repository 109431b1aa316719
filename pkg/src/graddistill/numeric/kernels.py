"""Sparse kernel dispatch.

The compiled extension is used when it was built; otherwise the numpy
fallback is used. Set ``GRAD_KERNELS=python`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("GRAD_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def csr_matmat(indptr, indices, data, dense, n_rows):
    """Dense ``(n_rows, k)`` result of a CSR matrix times ``dense``."""
    return _impl.csr_matmat(indptr, indices, data, dense, n_rows)


def csr_row_sample(indptr, keys, fanout):
    """Boolean entry mask keeping the ``fanout`` smallest-key entries per row."""
    return _impl.csr_row_sample(indptr, keys, int(fanout))
