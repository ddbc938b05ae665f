"""Hot-loop kernels, compiled when available.

``BACKEND`` names the implementation picked at import time. Set
``FAIRWIN_KERNEL=python`` to force the pure-Python fallback.
"""
import os

from . import _jacobi_py

python_jacobi_sweeps = _jacobi_py.jacobi_sweeps

try:
    from ._jacobi import jacobi_sweeps as compiled_jacobi_sweeps
except ImportError:  # extension not built
    compiled_jacobi_sweeps = None

if compiled_jacobi_sweeps is not None and os.environ.get("FAIRWIN_KERNEL", "").lower() != "python":
    jacobi_sweeps = compiled_jacobi_sweeps
    BACKEND = "cython"
else:
    jacobi_sweeps = python_jacobi_sweeps
    BACKEND = "python"

__all__ = ["BACKEND", "jacobi_sweeps", "python_jacobi_sweeps", "compiled_jacobi_sweeps"]
