"""Dense convex QP solving with a compiled core and a pure-Python fallback.

The active-set kernel has two implementations with identical pivoting rules:
``adampc.qp._core`` (Cython) and ``adampc.qp._pure`` (NumPy).  The compiled
core is preferred when importable; set ``ADAMPC_QP_BACKEND=pure`` or
``=compiled`` to force a choice.
"""

from __future__ import annotations

import os

from . import _pure
from .solver import (
    STATUS_INFEASIBLE,
    STATUS_ITERATION_LIMIT,
    STATUS_OPTIMAL,
    QpError,
    QpOutcome,
    QuadraticProgram,
)
from .solver import solve as _solve

try:
    from . import _core

    HAVE_COMPILED = True
except ImportError:
    _core = None
    HAVE_COMPILED = False


def _select_backend(name: str | None = None):
    name = name or os.environ.get("ADAMPC_QP_BACKEND", "auto")
    if name == "pure":
        return _pure.kernel_active_set, "pure"
    if name == "compiled":
        if not HAVE_COMPILED:
            raise QpError("compiled QP kernel requested but not built")
        return _core.kernel_active_set, "compiled"
    if name == "auto":
        if HAVE_COMPILED:
            return _core.kernel_active_set, "compiled"
        return _pure.kernel_active_set, "pure"
    raise QpError(f"unknown QP backend {name!r}")


BACKEND_NAME = _select_backend()[1]


def solve(qp: QuadraticProgram, backend: str | None = None, max_iter: int | None = None) -> QpOutcome:
    kernel, _ = _select_backend(backend)
    return _solve(qp, kernel=kernel, max_iter=max_iter)


__all__ = [
    "QuadraticProgram",
    "QpOutcome",
    "QpError",
    "solve",
    "HAVE_COMPILED",
    "BACKEND_NAME",
    "STATUS_OPTIMAL",
    "STATUS_INFEASIBLE",
    "STATUS_ITERATION_LIMIT",
]
