"""Backend selection for the per-client hot loops.

The compiled extension is used when it imports; otherwise the numpy
implementation is. Set ``MODFED_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("MODFED_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
python_impl = _kernels_py


def compiled_impl():
    """Return the compiled module, or ``None`` when it is unavailable."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


def get_impl(name=None):
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        mod = compiled_impl()
        if mod is None:
            raise RuntimeError("compiled kernels are not built")
        return mod
    raise ValueError(f"unknown backend {name!r}")


privatize = _impl.privatize
privatize_single = _impl.privatize_single
second_moment = _impl.second_moment
cross_moment = _impl.cross_moment
beta_moment = _impl.beta_moment
