"""Hot numeric kernels with two interchangeable backends.

``numba_impl`` carries ``@njit``-compiled loops; ``numpy_impl`` is the pure
vectorized fallback. Selection happens once at import time from the
``PSEUDOMASK_NUMBA`` environment variable:

    unset / "auto"   use numba when importable, else fall back to numpy
    "1" / "on"       require numba (ImportError otherwise)
    "0" / "off"      force the numpy path

Both backends implement the same contracts and agree to ~1e-12; see
``benchmarks/bench_kernels.py`` for a side-by-side timing comparison.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("PSEUDOMASK_NUMBA", "auto").strip().lower()

if _FLAG in ("0", "off", "false", "no"):
    NUMBA_ENABLED = False
elif _FLAG in ("1", "on", "true", "yes"):
    from . import numba_impl as _impl  # noqa: F401

    NUMBA_ENABLED = True
else:
    try:
        from . import numba_impl as _impl  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    from .numba_impl import pairwise_edge_loss, sinkhorn_log
else:
    from .numpy_impl import pairwise_edge_loss, sinkhorn_log


def get_backend(name: str):
    """Return a specific backend module ("numpy" or "numba") regardless of the flag."""
    if name == "numpy":
        from . import numpy_impl

        return numpy_impl
    if name == "numba":
        from . import numba_impl

        return numba_impl
    raise ValueError(f"unknown kernel backend {name!r}")


__all__ = ["sinkhorn_log", "pairwise_edge_loss", "NUMBA_ENABLED", "get_backend"]
