"""Kernel backend selection.

Prefers the compiled extension; falls back to the numpy implementation when
the extension is missing or ``RYDCRIT_PURE_PYTHON=1`` is set.  Both backends
share the same gather-form contract and identical summation order is not
required of them, only agreement to floating-point round-off.
"""

import os

if os.environ.get("RYDCRIT_PURE_PYTHON", "") == "1":
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND: str = _impl.BACKEND
apply_xor = _impl.apply_xor
apply_table = _impl.apply_table
