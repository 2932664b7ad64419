"""Backend selection for the LSTM recurrence.

The compiled extension is used when it imports; ``SENSELAB_PURE_PYTHON=1``
forces the NumPy path.
"""
import os

from . import _kernels_py

BACKENDS = {"python": _kernels_py}

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    BACKENDS["cython"] = _compiled

if _compiled is not None and not os.environ.get("SENSELAB_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"

_impl = BACKENDS[BACKEND]
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward


def get_backend(name: str):
    """Return the kernel module called ``name``; raises KeyError if unavailable."""
    return BACKENDS[name]
