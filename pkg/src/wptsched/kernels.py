"""Backend selection for the hot numerical kernels.

The compiled extension is used when it imported cleanly; otherwise, or when
``WPTSCHED_PURE_PYTHON=1`` is set, the numpy implementation takes over.
Both expose ``log_scaled_bessel``, ``log_bessel_i``, ``transition_params``
and ``transition_density``.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("WPTSCHED_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

log_scaled_bessel = _impl.log_scaled_bessel
log_bessel_i = _impl.log_bessel_i
transition_params = _impl.transition_params
transition_density = _impl.transition_density
switch_arg = _impl.switch_arg


def get_backend(name):
    """Return the kernel module for ``"python"`` or ``"compiled"``."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
