"""Backend selection for the hot kernels.

The compiled module is used when it imports; otherwise the numpy twin.
Set ``DCTTS_PURE_PYTHON=1`` to force the numpy path.
"""
import os

from . import _pykernels

if os.environ.get("DCTTS_PURE_PYTHON") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
highway_forward = _impl.highway_forward
highway_backward = _impl.highway_backward
adam_update = _impl.adam_update

__all__ = [
    "BACKEND",
    "conv1d_forward",
    "conv1d_backward",
    "highway_forward",
    "highway_backward",
    "adam_update",
]
