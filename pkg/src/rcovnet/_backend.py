"""Select the kernel implementation at import time.

The compiled ``_kernels`` extension is used when it imports cleanly; otherwise
the numpy fallback in ``_kernels_py`` takes over.  Set ``RCOVNET_BACKEND`` to
``python`` or ``cython`` to force one.
"""
import importlib
import os

_PREFERENCE = os.environ.get("RCOVNET_BACKEND", "auto").lower()


def _load(name):
    if name == "python":
        return importlib.import_module("rcovnet._kernels_py")
    if name == "cython":
        return importlib.import_module("rcovnet._kernels")
    raise ValueError(f"unknown backend {name!r}")


def available():
    """Names of the backends that import in this environment."""
    names = ["python"]
    try:
        _load("cython")
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


if _PREFERENCE == "auto":
    try:
        kernels = _load("cython")
    except ImportError:
        kernels = _load("python")
else:
    kernels = _load(_PREFERENCE)

NAME = kernels.NAME


def get(name=None):
    """Return the active kernel module, or a specific one by name."""
    return kernels if name is None else _load(name)


def set_num_threads(n):
    kernels.set_num_threads(int(n))
