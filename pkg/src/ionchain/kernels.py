"""Backend selection for the numerical kernels.

The compiled extension is preferred; the pure-Python module is used when the
extension was not built or when ``IONCHAIN_BACKEND=python`` is set.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

_MODULES = {"python": _kernels_py}
if _ckernels is not None:
    _MODULES["cython"] = _ckernels


def available_backends() -> list[str]:
    return sorted(_MODULES)


def _default() -> str:
    wanted = os.environ.get("IONCHAIN_BACKEND", "").strip().lower()
    if wanted in _MODULES:
        return wanted
    return "cython" if "cython" in _MODULES else "python"


BACKEND = _default()
_active = _MODULES[BACKEND]


def set_backend(name: str) -> str:
    """Switch the active backend; returns the previous name."""
    global BACKEND, _active
    if name not in _MODULES:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    previous = BACKEND
    BACKEND = name
    _active = _MODULES[name]
    return previous


def get_module(name: str | None = None):
    return _MODULES[name] if name else _active


def coulomb_terms(pos, charges, kc):
    return _active.coulomb_terms(pos, charges, kc)


def jacobi_eigh(a, tol=1e-15, max_sweeps=100):
    return _active.jacobi_eigh(a, tol, max_sweeps)
