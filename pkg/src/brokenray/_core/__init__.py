"""Kernel backend selection.

Imports the compiled Cython kernels when available, otherwise falls back to
the pure-numpy implementations. ``BACKEND`` records which one is active;
setting the environment variable ``BROKENRAY_BACKEND=python`` forces the
fallback (useful for benchmarking and backend-equivalence tests).
"""

import os

from . import kernels_py
from .kernels_py import (
    STATUS_EDGE,
    STATUS_MEASURED,
    STATUS_NEAR_MASK,
    STATUS_NO_EXIT,
    STATUS_TRAPPED,
    STATUS_UNMEASURED,
)

_forced = os.environ.get("BROKENRAY_BACKEND", "").lower()

if _forced == "python":
    impl = kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        impl = kernels_py
        BACKEND = "python"

exit_times = impl.exit_times
trace = impl.trace
interp_multilinear = impl.interp_multilinear
interp_nearest = impl.interp_nearest
project_midpoint = impl.project_midpoint
backproject_midpoint = impl.backproject_midpoint
attenuation_midpoint = impl.attenuation_midpoint
project_siddon = impl.project_siddon
backproject_siddon = impl.backproject_siddon
seg_sigma_siddon = impl.seg_sigma_siddon

__all__ = [
    "BACKEND",
    "impl",
    "kernels_py",
    "exit_times",
    "trace",
    "interp_multilinear",
    "interp_nearest",
    "project_midpoint",
    "backproject_midpoint",
    "attenuation_midpoint",
    "project_siddon",
    "backproject_siddon",
    "seg_sigma_siddon",
    "STATUS_MEASURED",
    "STATUS_TRAPPED",
    "STATUS_EDGE",
    "STATUS_NEAR_MASK",
    "STATUS_UNMEASURED",
    "STATUS_NO_EXIT",
]
