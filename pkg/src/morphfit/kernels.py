"""Kernel backend selection.

The compiled extension ``morphfit._tmop_kernel`` is used when it imports;
otherwise the NumPy implementation in ``morphfit._kernels_py`` is used.
Set ``MORPHFIT_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("MORPHFIT_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _tmop_kernel as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def tmop_element(X, D, wq, code, gamma, order, backend=None):
    """Dispatch to the selected backend; see ``_kernels_py.tmop_element``."""
    use = backend or BACKEND
    if use == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled TMOP kernel is not available")
        return _compiled.tmop_element(np.ascontiguousarray(X, dtype=float),
                                      np.ascontiguousarray(D, dtype=float),
                                      np.ascontiguousarray(wq, dtype=float),
                                      int(code), float(gamma), int(order))
    return _kernels_py.tmop_element(X, D, wq, code, gamma, order)


def compiled_available() -> bool:
    return _compiled is not None
