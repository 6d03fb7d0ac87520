"""Kernel backend selection: compiled Cython core when importable, numpy otherwise.

Set DISLOCORE_BACKEND=numpy to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

_BACKENDS = {"numpy": _kernels_py}

try:
    from . import _kernels as _kernels_cy

    _BACKENDS["cython"] = _kernels_cy
except ImportError:  # extension not built
    _kernels_cy = None


def thread_count() -> int:
    """Worker cap from DISLOCORE_THREADS, defaulting to the CPU count."""
    env = os.environ.get("DISLOCORE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def get_backend(name: str | None = None):
    name = name or os.environ.get("DISLOCORE_BACKEND") or ("cython" if _kernels_cy else "numpy")
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(_BACKENDS)}")
    mod = _BACKENDS[name]
    if hasattr(mod, "set_threads"):
        mod.set_threads(thread_count())
    return mod


def backend_for(V, U, name: str | None = None):
    """Backend for a potential pair. The compiled kernels hard-code the
    Stillinger-Weber and Morse forms, so other potentials use numpy."""
    from .potentials import ThreeBodyPotential, TwoBodyPotential

    if type(V) is not ThreeBodyPotential or type(U) is not TwoBodyPotential:
        if name not in (None, "numpy"):
            raise ValueError(f"backend {name!r} supports only the Stillinger-Weber and Morse potentials")
        return get_backend("numpy")
    return get_backend(name)


def available() -> list[str]:
    return sorted(_BACKENDS)
