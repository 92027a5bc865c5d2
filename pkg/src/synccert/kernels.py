"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly, unless the
environment variable ``SYNC_CERT_PURE_PYTHON`` is set to a non-empty value.
"""
import os

from . import _kernels_py

if os.environ.get("SYNC_CERT_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

hessenberg = _impl.hessenberg
real_schur = _impl.real_schur
rk4_linear = _impl.rk4_linear
iterate_linear = _impl.iterate_linear

__all__ = ["BACKEND", "hessenberg", "real_schur", "rk4_linear", "iterate_linear"]
