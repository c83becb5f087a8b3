"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the numpy
fallback is always available. Set GWA_KERNEL=python (or =compiled) to force
a backend at import time.
"""

from __future__ import annotations

import os

from . import fallback

_requested = os.environ.get("GWA_KERNEL", "").strip().lower()

_compiled = None
if _requested != "python":
    try:
        from . import _core as _compiled
    except ImportError:
        _compiled = None
        if _requested == "compiled":
            raise ImportError(
                "GWA_KERNEL=compiled but the gwa._kernels._core extension is "
                "not built; reinstall the package or unset GWA_KERNEL"
            )

_impl = _compiled if _compiled is not None else fallback

HAVE_COMPILED = _compiled is not None
BACKEND = "compiled" if _compiled is not None else "python"

alignment_batch = _impl.alignment_batch
batch_raw_moments = _impl.batch_raw_moments


def backend_name() -> str:
    return BACKEND
