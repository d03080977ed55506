"""Kernel backend selection.

The compiled extension ``imel._kernels`` is used when it imports; set
``IMEL_PURE_PYTHON=1`` to force the numpy fallback. ``BACKEND`` names the
active implementation.
"""

import os

from . import _kernels_py as python_backend

compiled_backend = None
if not os.environ.get("IMEL_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:
        compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

discounted_cumsum = _impl.discounted_cumsum
mki_interp = _impl.mki_interp
mki_interp_grad = _impl.mki_interp_grad
