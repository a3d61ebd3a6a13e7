"""Kernel dispatch.

Uses the compiled ``_ckernels`` extension when it imports, the numpy
fallback otherwise. Set ``MOODKIT_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

HELLINGER = _pykernels.HELLINGER
L1 = _pykernels.L1
L2 = _pykernels.L2
WASSERSTEIN = _pykernels.WASSERSTEIN

_ckernels = None
if os.environ.get("MOODKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"
_impl = _ckernels if _ckernels is not None else _pykernels

pair_discrepancy = _impl.pair_discrepancy
auroc_sorted = _impl.auroc_sorted


def backends():
    """Available implementations by name, for cross-checking and benchmarks."""
    out = {"python": _pykernels}
    if _ckernels is not None:
        out["cython"] = _ckernels
    return out
