"""Global-local forecasting toolkit for high-dimensional time series.

Thread count for BLAS-backed numpy kernels can be capped through the
GLOCAST_NUM_THREADS environment variable; it must be set before numpy is
first imported in the process, which holds for the ``glocast`` CLI entry
point and for ``python -m glocast``.
"""

import os as _os

_threads = _os.environ.get("GLOCAST_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
del _os, _threads

__version__ = "0.1.0"
