"""Pick the simulation kernel at import time.

The compiled extension is used when it imports; otherwise, or when
``RELALLOC_PURE_PYTHON`` is set to a non-empty value other than ``0``, the
pure-Python reference path runs instead.  Both produce the same numbers.
"""

import os

from . import _reference

_forced = os.environ.get("RELALLOC_PURE_PYTHON", "") not in ("", "0")

if _forced:
    _kernels = None
else:
    try:
        from . import _kernels
    except ImportError:  # extension not built
        _kernels = None

BACKEND = "compiled" if _kernels is not None else "python"


def simulate_block(problem, m, master_seed, start, stop, backend=None):
    """Posterior variances and squared errors of replications ``start..stop-1``."""
    name = backend or BACKEND
    if name == "compiled":
        if _kernels is None:
            raise RuntimeError("the compiled kernel is not available")
        return _kernels.simulate_block(problem, m, master_seed, start, stop)
    if name == "python":
        return _reference.simulate_block(problem, m, master_seed, start, stop)
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ["compiled", "python"] if _kernels is not None else ["python"]
