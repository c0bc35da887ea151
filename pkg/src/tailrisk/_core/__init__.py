"""Kernel backend selection.

Prefers the compiled extension; falls back to the pure-Python mirror.
Set TAILRISK_PURE_PYTHON=1 to force the fallback (used by the backend
equivalence tests and the kernel benchmark).
"""

import os

if os.environ.get("TAILRISK_PURE_PYTHON"):
    from . import _pyref as _impl

    BACKEND = "python"
else:
    try:
        from . import _recursions as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _pyref as _impl

        BACKEND = "python"

risk_filter = _impl.risk_filter
risk_joint_nll = _impl.risk_joint_nll
garch_sigma2 = _impl.garch_sigma2
garch_nll = _impl.garch_nll

__all__ = ["BACKEND", "risk_filter", "risk_joint_nll", "garch_sigma2", "garch_nll"]
