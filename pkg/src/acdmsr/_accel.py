"""Backend selection for the hot convolution kernels.

``ACDMSR_BACKEND=numba`` (default when numba imports) routes im2col/col2im
through the ``@njit`` kernels in :mod:`acdmsr.numerics.kernels`;
``ACDMSR_BACKEND=numpy`` forces the pure-numpy path.  Both paths accumulate
in the same order, so they agree bit-for-bit.
"""

from __future__ import annotations

import os

try:
    import numba  # noqa: F401

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False


def _resolve() -> str:
    flag = os.environ.get("ACDMSR_BACKEND", "").strip().lower()
    if flag in ("", "auto"):
        return "numba" if NUMBA_AVAILABLE else "numpy"
    if flag not in ("numba", "numpy"):
        raise ValueError(f"ACDMSR_BACKEND must be 'numba' or 'numpy', got {flag!r}")
    if flag == "numba" and not NUMBA_AVAILABLE:
        raise ImportError("ACDMSR_BACKEND=numba but numba is not importable")
    return flag


BACKEND = _resolve()


def use_numba() -> bool:
    return BACKEND == "numba"


def set_backend(name: str) -> None:
    """Switch backend at runtime (benchmarks and equivalence tests use this)."""
    global BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(name)
    if name == "numba" and not NUMBA_AVAILABLE:
        raise ImportError("numba is not importable")
    BACKEND = name


def worker_count() -> int:
    """Worker cap from ``ACDMSR_THREADS`` (default 1)."""
    raw = os.environ.get("ACDMSR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"ACDMSR_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ValueError(f"ACDMSR_THREADS must be a positive integer, got {raw!r}")
    return n
