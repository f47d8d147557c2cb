"""Kernel lane selection.

The hot numeric kernels (hash-grid interpolation, ray compositing, the
deterministic matmuls) exist twice: a numba @njit build and a pure-numpy
build with identical contracts. The lane is chosen once at import time from
the LANGFIELD_KERNELS environment variable:

    LANGFIELD_KERNELS=numba   force the compiled lane (error if unavailable)
    LANGFIELD_KERNELS=numpy   force the pure-numpy lane
    unset / auto              numba if importable, else numpy

`benchmarks/bench_kernels.py` compares the two lanes.
"""

import os

_requested = os.environ.get("LANGFIELD_KERNELS", "auto").lower()

if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"LANGFIELD_KERNELS must be 'auto', 'numba', or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    from . import numpy_impl as _impl

    BACKEND = "numpy"
elif _requested == "numba":
    from . import numba_impl as _impl

    BACKEND = "numba"
else:
    try:
        from . import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        from . import numpy_impl as _impl

        BACKEND = "numpy"

encode_fwd = _impl.encode_fwd
encode_bwd = _impl.encode_bwd
composite_fwd = _impl.composite_fwd
composite_bwd = _impl.composite_bwd
matmul = _impl.matmul
matmul_tn = _impl.matmul_tn

HASH_P1 = _impl.HASH_P1
HASH_P2 = _impl.HASH_P2
HASH_P3 = _impl.HASH_P3
