"""Kernel dispatch.

Picks the compiled OMP kernel when it imports, the pure-Python one
otherwise.  Setting ``DASKSVD_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
omp_batch = _pykernels.omp_batch

if os.environ.get("DASKSVD_PURE_PYTHON") != "1":
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        omp_batch = _ckernels.omp_batch
        BACKEND = "cython"

__all__ = ["BACKEND", "omp_batch"]
