"""Pick the compiled solver kernel if it was built, else the Python one.

Set ``BDEFS_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _svmcore_py

BACKEND = "python"
dual_cd = _svmcore_py.dual_cd

if not os.environ.get("BDEFS_PURE_PYTHON"):
    try:
        from . import _svmcore
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        dual_cd = _svmcore.dual_cd


def kernels(name: str | None = None):
    """Return the ``dual_cd`` implementation for ``name`` ('cython'/'python')."""
    if name is None:
        return dual_cd
    if name == "python":
        return _svmcore_py.dual_cd
    if name == "cython":
        from . import _svmcore
        return _svmcore.dual_cd
    raise ValueError(f"unknown backend {name!r}")
