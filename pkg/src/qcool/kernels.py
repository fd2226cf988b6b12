"""Select the compiled kernels when available, else the numpy versions.

Set ``QCOOL_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels
from ._pykernels import (  # noqa: F401  (column indices are shared)
    F_E, F_LOGN, F_P, F_PP, F_Q, F_QP, F_QQ, F_TOP, N_FOCK_STATS,
    G_MASS, G_MAX, G_MIN, G_X, G_XX, G_XY, G_Y, G_YY, N_GRID_STATS,
)

_impl = _pykernels
BACKEND = "python"
if not os.environ.get("QCOOL_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

gaussian_run = _impl.gaussian_run
fock_run = _impl.fock_run
qfunc_run = _impl.qfunc_run
qgrid_fields = _impl.qgrid_fields
# moment sums of a Q grid; cheap enough that only the numpy version exists
grid_stats = _pykernels._grid_stats


def backend_module(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
