"""Kernel backend selection.

The hot inner loops (3x3 convolution, pooling, binary morphology, component
labeling) exist twice: a numba-JIT version and a pure-NumPy fallback. The
environment variable ``CTRKIT_BACKEND`` picks one:

    CTRKIT_BACKEND=numba   force the JIT kernels (error if numba missing)
    CTRKIT_BACKEND=numpy   force the pure-NumPy fallback
    unset / "auto"         numba when importable, else NumPy

``benchmarks/bench_kernels.py`` compares the two paths.
"""

from __future__ import annotations

import os


def _pick_backend() -> str:
    choice = os.environ.get("CTRKIT_BACKEND", "auto").strip().lower()
    if choice in ("", "auto"):
        try:
            import numba  # noqa: F401
        except ImportError:
            return "numpy"
        return "numba"
    if choice not in ("numba", "numpy"):
        raise RuntimeError(
            f"CTRKIT_BACKEND must be 'numba', 'numpy' or 'auto', got {choice!r}"
        )
    return choice


BACKEND = _pick_backend()

if BACKEND == "numba":
    from . import numba_ops as _impl
else:
    from . import numpy_ops as _impl

conv3x3_forward = _impl.conv3x3_forward
conv3x3_backward = _impl.conv3x3_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
binary_erode = _impl.binary_erode
binary_dilate = _impl.binary_dilate
label_components = _impl.label_components
