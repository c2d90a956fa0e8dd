"""Backend selection for the hot loops.

The compiled extension is used when it imports; set ``CELLCYCLE_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("CELLCYCLE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels


def backend(name=None):
    """Return the kernel module for ``name`` ('compiled', 'python') or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "compiled":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def scan_scalar(coef, offs, x0, impl=None):
    """Run the 1-d affine recursion x <- coef*x + offs along axis 0."""
    impl = impl or _impl
    return impl.scan_scalar(
        np.ascontiguousarray(coef, dtype=np.float64),
        np.ascontiguousarray(offs, dtype=np.float64),
        np.ascontiguousarray(x0, dtype=np.float64),
    )


def scan_matrix(A, offs, x0, impl=None):
    """Run x <- A @ x + offs along axis 0 for a batch of chains."""
    impl = impl or _impl
    return impl.scan_matrix(
        np.ascontiguousarray(A, dtype=np.float64),
        np.ascontiguousarray(offs, dtype=np.float64),
        np.ascontiguousarray(x0, dtype=np.float64),
    )


def grid_search(dist, c, vals, impl=None):
    impl = impl or _impl
    return float(
        impl.grid_search(
            np.ascontiguousarray(dist, dtype=np.float64),
            np.ascontiguousarray(c, dtype=np.float64),
            np.ascontiguousarray(vals, dtype=np.float64),
        )
    )
