"""Numba switch.

Set ``GSMPPI_DISABLE_NUMBA=1`` to force the pure-numpy code paths. When numba
is missing the same thing happens silently.
"""
import os

_disabled = os.environ.get("GSMPPI_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

# Thread-pool ceiling; numba fixes it at import. The active count defaults to
# the core count and can be raised up to the ceiling with set_workers().
MAX_WORKERS = max(os.cpu_count() or 1, 8)
os.environ.setdefault("NUMBA_NUM_THREADS", str(MAX_WORKERS))
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

try:
    if _disabled:
        raise ImportError
    import numba
    from numba import njit, prange

    NUMBA_AVAILABLE = True
    numba.set_num_threads(min(os.cpu_count() or 1, numba.config.NUMBA_NUM_THREADS))
except ImportError:
    numba = None
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        # bare @njit or @njit(...)
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrapper(func):
            return func

        return wrapper

    prange = range


def set_workers(workers):
    """Set the numba thread count, returning the previous value (None without numba)."""
    if not NUMBA_AVAILABLE or workers is None:
        return None
    prev = numba.get_num_threads()
    numba.set_num_threads(min(int(workers), numba.config.NUMBA_NUM_THREADS))
    return prev
