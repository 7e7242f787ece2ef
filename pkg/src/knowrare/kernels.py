"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``KNOWRARE_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("KNOWRARE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

window_means = _impl.window_means
fill_missing = _impl.fill_missing
ranked_auc = _impl.ranked_auc
lstm_cell_forward = _impl.lstm_cell_forward
lstm_cell_backward = _impl.lstm_cell_backward
