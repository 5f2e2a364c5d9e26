"""Backend selection for the hot kernels.

The compiled ``_shoot`` extension is used when it imports; otherwise, or when
``BIRKHOFF_PURE_PYTHON=1`` is set, the numpy implementation takes over. Both
expose ``solve_bvp_batch``, ``shoot``, ``shoot_batch`` and ``march_chords``
with identical signatures.
"""

import os

from . import _shoot_py

BACKEND = "python"
_impl = _shoot_py

if os.environ.get("BIRKHOFF_PURE_PYTHON", "") != "1":
    try:
        from . import _shoot as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

solve_bvp_batch = _impl.solve_bvp_batch
shoot = _impl.shoot
shoot_batch = _impl.shoot_batch
march_chords = _impl.march_chords


def backends():
    """Map backend name to module for every backend importable here."""
    out = {"python": _shoot_py}
    try:
        from . import _shoot
    except ImportError:
        return out
    out["cython"] = _shoot
    return out
