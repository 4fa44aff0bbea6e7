"""Kernel dispatch: the compiled module when importable, numpy otherwise.

Set ``WANING_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _pykernels

try:
    if os.environ.get("WANING_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python kernels requested")
    from . import _ckernels as _impl

    BACKEND = "compiled"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

cox_partial_stats = _impl.cox_partial_stats
breslow_increments = _impl.breslow_increments
tabulate = _impl.tabulate


def available_backends():
    """Mapping of backend name to kernel module, for tests and benchmarks."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["compiled"] = _ckernels
    except ImportError:
        pass
    return out
