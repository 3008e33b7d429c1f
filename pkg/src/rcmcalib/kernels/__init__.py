"""Hot numeric kernels with a compiled core and a pure-Python fallback.

The per-frame residual/Jacobian evaluation dominates the two-phase
optimizer's runtime, so it ships as a Cython extension (kernels._core).
Import falls back to the numpy twin (kernels.purepy) when the extension is
unavailable, and the RCMCALIB_PURE_PY=1 environment variable forces the
fallback (used by the parity tests and the benchmark).

Both backends implement frame_residuals() with identical semantics; see
purepy.frame_residuals for the contract.
"""

from __future__ import annotations

import importlib
import os

from . import purepy


def _import_core():
    try:
        return importlib.import_module(__name__ + "._core")
    except ImportError:
        return None


_core = None
if os.environ.get("RCMCALIB_PURE_PY", "") not in ("1", "true", "yes"):
    _core = _import_core()

_backend = _core if _core is not None else purepy


def active_backend() -> str:
    """Name of the backend selected at import: 'cython' or 'python'."""
    return "cython" if _backend is not purepy else "python"


def available_backends() -> dict:
    """Importable backends keyed by name (for benchmarks and parity tests)."""
    out = {"python": purepy}
    core = _core if _core is not None else _import_core()
    if core is not None:
        out["cython"] = core
    return out


def frame_residuals(*args, **kwargs):
    return _backend.frame_residuals(*args, **kwargs)


def loss_and_grad(*args):
    """Scalar objective and 9-gradient from the residual kernel.

    loss = sum(r^2); grad = 2 J^T r. Returns (loss, grad, min_depth).
    """
    resid, jac, min_depth = _backend.frame_residuals(*args, True)
    return float(resid @ resid), 2.0 * (jac.T @ resid), min_depth


def loss_only(*args):
    """Scalar objective without the Jacobian. Returns (loss, min_depth)."""
    resid, _, min_depth = _backend.frame_residuals(*args, False)
    return float(resid @ resid), min_depth
