"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The compiled extension (``paintbox.kernels._core``) is preferred when it
imports; set ``PAINTBOX_PURE=1`` to force the numpy fallback.  Both
backends expose identical signatures and produce identical results.
"""

import os

from . import fallback

if os.environ.get("PAINTBOX_PURE", "") not in ("", "0"):
    _impl = fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = fallback
        BACKEND = "python"

exclusive_scan = _impl.exclusive_scan
raycast_rays = _impl.raycast_rays
route_descriptors = _impl.route_descriptors
extract_patches = _impl.extract_patches
propagate_candidates = _impl.propagate_candidates


def get_backend(name):
    """Return a backend module by name ('compiled' or 'python')."""
    if name == "python":
        return fallback
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown kernel backend: {name!r}")
