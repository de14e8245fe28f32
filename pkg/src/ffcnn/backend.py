"""Kernel backend selection.

The hot kernels (patch extraction, pooling, Lloyd iterations, SVM dual
optimization) exist twice: numba @njit versions and pure-numpy versions
with identical signatures. The numba set is used when importable unless
FFCNN_DISABLE_NUMBA is set to 1/true/yes. ``benchmarks/bench_backends.py``
compares the two.
"""

import os

_flag = os.environ.get("FFCNN_DISABLE_NUMBA", "").strip().lower()
_disabled = _flag in ("1", "true", "yes")

if _disabled:
    from . import _kernels_numpy as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _kernels_numba as _impl

        BACKEND = "numba"
    except ImportError:
        from . import _kernels_numpy as _impl

        BACKEND = "numpy"

im2col = _impl.im2col
maxpool2 = _impl.maxpool2
lloyd = _impl.lloyd
smo = _impl.smo
