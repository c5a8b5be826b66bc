"""Kernel backend selection.

Prefers the compiled extension and falls back to the numpy kernels when
it is missing.  Set PIDM_KERNELS=python (or =compiled) to force a choice;
forcing the compiled backend raises if the extension did not build.
"""
from __future__ import annotations

import os

from . import _kernels_py

_FORCE = os.environ.get("PIDM_KERNELS", "").strip().lower()

_impl = None
if _FORCE in ("", "compiled", "cy"):
    try:
        from . import _kernels_cy as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _FORCE:
            raise
        _impl = None
if _impl is None:
    _impl = _kernels_py

conv1d_forward = _impl.conv1d_forward
conv1d_grad_input = _impl.conv1d_grad_input
conv1d_grad_weight = _impl.conv1d_grad_weight


def kernel_backend() -> str:
    """Name of the active kernel implementation ("compiled" or "python")."""
    return _impl.BACKEND_NAME
