"""Kernel backend selection.

The hot numeric kernels exist twice: ``numba_impl`` (JIT-compiled) and
``numpy_impl`` (pure numpy, the reference). ``SCOREMOMENTS_BACKEND`` picks
one: "numba", "numpy", or "auto" (default: numba when importable).
Within a backend, every kernel is deterministic run-to-run.
"""

import os
import warnings

from ..config import BACKEND_ENV_VAR
from . import numpy_impl


def _select():
    choice = os.environ.get(BACKEND_ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        warnings.warn(
            f"{BACKEND_ENV_VAR}={choice!r} not recognized; using 'auto'",
            stacklevel=2,
        )
        choice = "auto"
    if choice == "numpy":
        return numpy_impl
    try:
        from . import numba_impl
    except ImportError:
        if choice == "numba":
            raise
        return numpy_impl
    return numba_impl


kernels = _select()
BACKEND_NAME = kernels.NAME
