"""Backend dispatch between the numba and pure-numpy kernel lanes.

The default lane is numba when importable, unless the environment
variable ``TRUNCAUG_NUMBA`` is set to ``0``/``false``/``numpy``.  The
plain lane runs the identical source uncompiled; uint64 overflow in the
splitmix arithmetic is intentional, so those warnings are suppressed
around plain-lane calls.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_impl as _plain

_FALSEY = ("0", "false", "no", "off", "numpy")


def _env_wants_numba() -> bool:
    return os.environ.get("TRUNCAUG_NUMBA", "1").strip().lower() not in _FALSEY


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


_current = "numba" if (_env_wants_numba() and _numba_available()) else "numpy"
_jit_module = None


def backend() -> str:
    return _current


def set_backend(name: str) -> str:
    """Switch lanes at runtime (used by tests and the benchmark)."""
    global _current
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _numba_available():
        raise RuntimeError("numba backend requested but numba is not importable")
    _current = name
    return _current


def _lane(name: str):
    global _jit_module
    if name == "numpy":
        return _plain
    if _jit_module is None:
        from . import _kernels_jit
        _jit_module = _kernels_jit
    return _jit_module


def call(name: str, *args, backend_name: str | None = None):
    lane_name = backend_name or _current
    fn = getattr(_lane(lane_name), name)
    if lane_name == "numpy":
        with np.errstate(over="ignore"):
            return fn(*args)
    return fn(*args)


def seed_state(seed: int) -> np.uint64:
    """Canonical uint64 master seed from any Python integer."""
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


def derive_seed(seed: int, tag: int) -> np.uint64:
    """Deterministic child seed for independent experiment stages."""
    with np.errstate(over="ignore"):
        return _plain.mix64(seed_state(seed) + np.uint64(tag) * _plain._STRIDE)
