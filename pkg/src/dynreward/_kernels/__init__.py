"""Hot-path kernels: batched evaluation of a stack of same-shaped MLPs.

The compiled Cython extension is preferred; a pure-numpy fallback with
identical semantics is selected when the extension is unavailable or when
DYNREWARD_FORCE_FALLBACK=1 is set.  ``backend_name()`` reports the choice.
"""

from __future__ import annotations

import os

from dynreward._kernels import fallback as _fallback

_impl = _fallback
_backend = "numpy-fallback"

if os.environ.get("DYNREWARD_FORCE_FALLBACK", "0") != "1":
    try:
        from dynreward._kernels import _fastmlp as _ext

        _impl = _ext
        _backend = "cython-ext"
    except ImportError:
        pass


def backend_name() -> str:
    return _backend


def stacked_mlp_forward(x, weights, biases, activation: str):
    """Evaluate T same-architecture MLPs on one input batch.

    x: (B, d_in); weights[l]: (T, d_l, d_{l+1}); biases[l]: (T, d_{l+1}).
    Hidden layers use ``activation``, the last layer is linear.
    Returns (T, B, d_out).
    """
    return _impl.stacked_mlp_forward(x, weights, biases, activation)


def available_backends() -> dict:
    """Both implementations, keyed by name (for tests and benchmarks)."""
    out = {"numpy-fallback": _fallback.stacked_mlp_forward}
    try:
        from dynreward._kernels import _fastmlp as _ext

        out["cython-ext"] = _ext.stacked_mlp_forward
    except ImportError:
        pass
    return out
