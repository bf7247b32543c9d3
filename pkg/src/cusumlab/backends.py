"""Backend selection for the scan kernels.

The compiled extension is preferred; the numpy fallback is semantically
identical (bit-for-bit, by construction and by test). Set CUSUMLAB_BACKEND to
"python" to force the fallback or "compiled" to fail loudly when the
extension is missing.
"""
from __future__ import annotations

import os

_choice = os.environ.get("CUSUMLAB_BACKEND", "").strip().lower()

if _choice in ("python", "py"):
    from . import _scan_py as scan
    COMPILED = False
elif _choice in ("compiled", "c"):
    from . import _scan as scan  # type: ignore[no-redef]
    COMPILED = True
else:
    try:
        from . import _scan as scan  # type: ignore[no-redef]
        COMPILED = True
    except ImportError:  # pragma: no cover - exercised via env override
        from . import _scan_py as scan  # type: ignore[no-redef]
        COMPILED = False

BACKEND = "compiled" if COMPILED else "python"

__all__ = ["scan", "COMPILED", "BACKEND"]
