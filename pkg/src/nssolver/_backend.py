"""Kernel backend selection.

The compiled extension is preferred when present; NSSOLVER_PURE_PY=1 forces
the numpy fallback (useful for the backend benchmark and for debugging).
"""

import os

if os.environ.get("NSSOLVER_PURE_PY") == "1":
    from . import _core_py as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _core_py as _impl

backend_name = _impl.NAME
bsr_matvec = _impl.bsr_matvec
block_diag_matvec = _impl.block_diag_matvec


def get_backends():
    """Both kernel implementations, for benchmarks and equivalence tests.

    Returns a dict name -> module; the compiled entry is absent when the
    extension was not built.
    """
    from . import _core_py
    out = {_core_py.NAME: _core_py}
    try:
        from . import _core  # type: ignore[attr-defined]
        out[_core.NAME] = _core
    except ImportError:
        pass
    return out
