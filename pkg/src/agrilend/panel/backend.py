"""Kernel selection: the compiled extension when importable, NumPy otherwise.

Set ``AGRILEND_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

compiled = None
if not os.environ.get("AGRILEND_PURE_PYTHON"):
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

kernels = compiled if compiled is not None else _fallback
NAME = "cython" if compiled is not None else "numpy"


def get(name=None):
    """Return the kernel module called ``name`` ("cython" or "numpy"), or the default."""
    if name is None:
        return kernels
    if name == "numpy":
        return _fallback
    if name == "cython":
        if compiled is None:
            raise ImportError("compiled kernels are not available; build the extension first")
        return compiled
    raise ValueError(f"unknown backend {name!r}")
