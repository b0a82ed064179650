"""Select the compiled element kernels when built, else the numpy ones.

Set ``VEMSTAB_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
element_matrices = _kernels_py.element_matrices

if not os.environ.get("VEMSTAB_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        element_matrices = _compiled.element_matrices
        BACKEND = "cython"

p2_values = _kernels_py.p2_values
p2_dlam = _kernels_py.p2_dlam
barycentric_gradients = _kernels_py.barycentric_gradients
