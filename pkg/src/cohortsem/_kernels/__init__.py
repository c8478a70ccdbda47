"""Kernel backend selection.

The likelihood's inner loop runs one of two interchangeable backends:

* ``c`` - the Cython extension ``_ck`` (BLAS calls fused per pattern);
* ``python`` - the NumPy implementation in :mod:`.numpy_backend`.

Selection happens once at import. ``COHORTSEM_KERNEL`` forces a choice
(``c`` | ``python`` | ``auto``); the default ``auto`` takes the compiled
kernel when the extension built, else falls back silently.
"""

from __future__ import annotations

import os

from . import numpy_backend

_choice = os.environ.get("COHORTSEM_KERNEL", "auto").lower()
if _choice not in ("auto", "c", "python"):
    raise RuntimeError(f"COHORTSEM_KERNEL must be auto|c|python, got {_choice!r}")

_impl = numpy_backend
_backend_name = "python"
if _choice in ("auto", "c"):
    try:
        from . import _ck as _impl  # type: ignore[no-redef]

        _backend_name = "c"
    except ImportError:
        if _choice == "c":
            raise RuntimeError(
                "COHORTSEM_KERNEL=c but the compiled kernel is not available; "
                "build it with `pip install -e . --no-build-isolation`"
            ) from None

gauss_affine = _impl.gauss_affine
gauss_batch = _impl.gauss_batch
chol_inverse = _impl.chol_inverse
chol_lower = _impl.chol_lower
cohort_scalar_mean = _impl.cohort_scalar_mean


def backend_name() -> str:
    """Active kernel backend: ``"c"`` or ``"python"``."""
    return _backend_name
