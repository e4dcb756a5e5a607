"""Backend selection for the pooling kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
NumPy fallback.  ``DIALCL_BACKEND=python`` forces the fallback.

Only the backward scatter-add is taken from the extension.  The forward
pass is dominated by ``tanh``, which NumPy vectorises and a scalar C loop
does not, so NumPy wins there (see ``benchmarks/bench_kernels.py``).
"""
import os

from . import _pykernels

python_backend = _pykernels
compiled_backend = None

if os.environ.get("DIALCL_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        compiled_backend = None

BACKEND = "cython" if compiled_backend is not None else "python"

pool_forward = _pykernels.pool_forward
pool_backward = (compiled_backend or _pykernels).pool_backward
