"""Kernel backend selection.

The compiled extension (`zsmil._core`, Cython) is preferred when importable;
otherwise the numpy fallback (`zsmil._core_py`) is used. `ZSMIL_BACKEND`
forces the choice (`c` or `python`), which exists for the parity tests and
the backend benchmark; results of the two backends agree to float64
roundoff, so the active backend is a performance choice, not a semantic one.
"""

from __future__ import annotations

import os

from . import _core_py

_forced = os.environ.get("ZSMIL_BACKEND", "").strip().lower()

if _forced == "python":
    kernels = _core_py
elif _forced == "c":
    from . import _core as kernels  # noqa: F401  (raises if not built)
else:
    try:
        from . import _core as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _core_py


def backend_name() -> str:
    return kernels.BACKEND_NAME
