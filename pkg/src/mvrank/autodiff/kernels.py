"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations in ``_pykernels`` are used. Set ``MVRANK_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _pykernels

python_backend = _pykernels

try:
    if os.environ.get("MVRANK_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from . import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None and backend is compiled_backend else "python"


def use(name):
    """Switch the active backend to ``"cython"`` or ``"python"``."""
    global backend, BACKEND
    if name == "cython":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not available")
        backend = compiled_backend
    elif name == "python":
        backend = python_backend
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
