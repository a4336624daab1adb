"""Hot-kernel backend selection.

Two interchangeable backends implement the inner-loop kernels: a Cython
extension (_ckernels) and a numpy fallback (_pykernels). The compiled one
is preferred when importable; set IRR_KERNELS=python or IRR_KERNELS=compiled
to force a choice. Matrix products are delegated to BLAS in both backends
and are not part of this surface.

Run benchmarks/kernel_bench.py for a side-by-side timing of the two.
"""

import os

from ..errors import ConfigError

_requested = os.environ.get("IRR_KERNELS", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise ConfigError(f"IRR_KERNELS must be auto|compiled|python, got {_requested!r}")

_impl = None
if _requested in ("auto", "compiled"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _requested == "compiled":
            raise
if _impl is None:
    from . import _pykernels as _impl

BACKEND = _impl.BACKEND

softmax_rows = _impl.softmax_rows
softmax_rows_grad = _impl.softmax_rows_grad
relu = _impl.relu
relu_grad = _impl.relu_grad
layernorm = _impl.layernorm
layernorm_grad = _impl.layernorm_grad
adam_update = _impl.adam_update
nearest_centroids = _impl.nearest_centroids
