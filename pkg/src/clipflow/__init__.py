"""clipflow: local vs. global per-sample clipping for differentially private training.

Set ``CLIPFLOW_THREADS`` before the first import to cap BLAS threads.
"""
import os

_threads = os.environ.get("CLIPFLOW_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
