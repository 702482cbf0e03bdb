"""Backend selection for the integrator kernel.

The compiled extension is used when it imports; setting the environment
variable ``BULKNOISE_PURE_PYTHON=1`` forces the NumPy fallback.
"""

import os

from . import _kernels_py

_compiled = None
if os.environ.get("BULKNOISE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

backend = _compiled if _compiled is not None else _kernels_py
BACKEND = backend.BACKEND


def get_backend(name: str | None = None):
    """Return the kernel module ``"cython"``, ``"python"`` or the default."""
    if name is None:
        return backend
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernel is not available; rebuild the package")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def compiled_available() -> bool:
    return _compiled is not None
