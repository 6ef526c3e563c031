"""Backend selection for the force and integrator kernels.

The compiled extension is used when it imports; setting ``IONKINK_PURE=1``
forces the numpy fallback.  Both expose ``forces`` and ``run_baoab`` with
identical signatures.
"""

import os

from . import _kernels_py

try:
    if os.environ.get("IONKINK_PURE"):
        raise ImportError("pure backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

HAVE_EXTENSION = _compiled is not None
BACKEND = "cython" if HAVE_EXTENSION else "python"
_active = _compiled if _compiled is not None else _kernels_py


def get_backend(name=None):
    """Return the kernel module for ``name`` (``"cython"``, ``"python"`` or default)."""
    if name is None:
        return _active
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def forces(z, x, kz, kxm, w2, efield, cc):
    return _active.forces(z, x, kz, kxm, w2, efield, cc)


def run_baoab(*args):
    return _active.run_baoab(*args)
