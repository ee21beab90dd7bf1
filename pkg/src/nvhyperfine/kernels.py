"""Propagation kernels, compiled when available.

Set ``NVHYPERFINE_PURE_PYTHON=1`` to force the numpy implementation.
"""

import os

if os.environ.get("NVHYPERFINE_PURE_PYTHON", "") not in ("", "0"):
    from ._kernels_py import chain_product, evolve_periodic, step_unitaries

    BACKEND = "python"
else:
    try:
        from ._kernels import chain_product, evolve_periodic, step_unitaries

        BACKEND = "cython"
    except ImportError:
        from ._kernels_py import chain_product, evolve_periodic, step_unitaries

        BACKEND = "python"

__all__ = ["BACKEND", "chain_product", "evolve_periodic", "step_unitaries"]
