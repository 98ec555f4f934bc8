"""Numeric kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports; set ``HYBRIDWM_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation. Both
backends agree to floating-point rounding, not bit-for-bit.
"""

import os

from . import _reference

BACKEND = "python"
if not os.environ.get("HYBRIDWM_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _reference
    else:
        BACKEND = "cython"
else:
    _impl = _reference

# past a few hundred rows BLAS-backed matmul beats the compiled loops
BLAS_ROWS = 256


def mlp_forward(x, w1, b1, w2, b2, w3, b3):
    impl = _reference if x.shape[0] > BLAS_ROWS else _impl
    return impl.mlp_forward(x, w1, b1, w2, b2, w3, b3)


pinball = _impl.pinball
quantile_sample = _impl.quantile_sample
reachable = _impl.reachable

__all__ = ["BACKEND", "BLAS_ROWS", "mlp_forward", "pinball", "quantile_sample", "reachable", "backends"]


def backends() -> dict:
    """Every importable backend module, keyed by name."""
    out = {"python": _reference}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
