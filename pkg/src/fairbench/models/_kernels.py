"""Backend selection for the tree kernels.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``FAIRBENCH_BACKEND=python`` to force the fallback.
"""
import os

from . import _tree_py

try:
    from . import _tree_ext
except ImportError:  # extension not built
    _tree_ext = None

_BACKENDS = {"python": _tree_py}
if _tree_ext is not None:
    _BACKENDS["cython"] = _tree_ext


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        name = BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"tree backend {name!r} unavailable; have {available_backends()}") from None


_requested = os.environ.get("FAIRBENCH_BACKEND", "").strip().lower()
if _requested in _BACKENDS:
    BACKEND = _requested
else:
    BACKEND = "cython" if _tree_ext is not None else "python"
