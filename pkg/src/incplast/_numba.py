"""Kernel backend selection.

Hot kernels are written once in nopython-compatible numpy style and wrapped
with ``njit``.  Setting the environment variable ``INCPLAST_NO_NUMBA=1``
before import turns the wrapper into a no-op, so the same source runs as the
pure-numpy fallback.  ``INCPLAST_THREADS`` caps the numba thread pool.
"""
import os

DISABLE_ENV = "INCPLAST_NO_NUMBA"
THREADS_ENV = "INCPLAST_THREADS"

NUMBA_ENABLED = False
if os.environ.get(DISABLE_ENV, "0").lower() not in ("1", "true", "yes"):
    try:
        import numba as _numba

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        _numba = None

if NUMBA_ENABLED and os.environ.get(THREADS_ENV):
    _numba.set_num_threads(max(1, int(os.environ[THREADS_ENV])))


if NUMBA_ENABLED:

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)

else:

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


def python_impl(func):
    """Return the pure-python implementation behind a jitted kernel."""
    return getattr(func, "py_func", func)
