"""Hot inner loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``FDPLC_NUMBA`` is not set to a
false value (``0``, ``false``, ``no``, ``off``). Both paths share signatures, so
``kernels.numpy_impl`` and ``kernels.numba_impl`` can be compared directly.
"""
import os

from . import _numpy as numpy_impl

_FALSE = {"0", "false", "no", "off"}


def _numba_requested():
    return os.environ.get("FDPLC_NUMBA", "1").strip().lower() not in _FALSE


try:
    if not _numba_requested():
        raise ImportError("numba disabled by FDPLC_NUMBA")
    from . import _numba as numba_impl
except ImportError:
    numba_impl = None

active = numba_impl if numba_impl is not None else numpy_impl
BACKEND = "numba" if numba_impl is not None else "numpy"

gru_scan_forward = active.gru_scan_forward
gru_scan_backward = active.gru_scan_backward
window_attention_forward = active.window_attention_forward
window_attention_backward = active.window_attention_backward
cap_bursts = active.cap_bursts
markov_walk = active.markov_walk
nearest_codeword = active.nearest_codeword

__all__ = [
    "BACKEND",
    "numpy_impl",
    "numba_impl",
    "gru_scan_forward",
    "gru_scan_backward",
    "window_attention_forward",
    "window_attention_backward",
    "cap_bursts",
    "markov_walk",
    "nearest_codeword",
]
