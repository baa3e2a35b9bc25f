"""Selects the compiled kernels when available, else the numpy fallback."""
import os

if os.environ.get("UPDATELEAK_PURE_PYTHON", "") not in ("", "0"):
    from . import _pycore as kernels
else:
    try:
        from . import _core as kernels
    except ImportError:  # extension not built
        from . import _pycore as kernels

BACKEND = kernels.NAME
