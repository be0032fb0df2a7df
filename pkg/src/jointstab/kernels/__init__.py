"""Hot kernels, compiled when available.

The Cython extension ``_ckernels`` is imported if it was built; otherwise the
numpy fallback in ``_pykernels`` is used. Setting the environment variable
``JOINTSTAB_PURE_PYTHON=1`` forces the fallback. ``BACKEND`` names the one in
use.
"""

import os

from . import _pykernels

if os.environ.get("JOINTSTAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

dare_value_iteration = _impl.dare_value_iteration
simulate = _impl.simulate
weighted_residuals = _impl.weighted_residuals


def available_backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
