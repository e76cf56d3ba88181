"""Kernel backend selection.

The convolution inner loops exist twice: a numba-jitted version and a pure
numpy fallback.  ``MOC_BACKEND`` picks one:

* ``numba`` - require the jitted kernels, fail loudly if numba is missing
* ``numpy`` - force the pure numpy path
* ``auto`` (default, or unset) - numba when importable, numpy otherwise

The choice is resolved once at import time; ``benchmarks/bench_kernels.py``
compares both paths directly.
"""

import os


def _probe_numba() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


_requested = os.environ.get("MOC_BACKEND", "auto").strip().lower()

if _requested == "numpy":
    USE_NUMBA = False
elif _requested == "numba":
    if not _probe_numba():
        raise ImportError("MOC_BACKEND=numba but numba is not importable")
    USE_NUMBA = True
elif _requested == "auto" or _requested == "":
    USE_NUMBA = _probe_numba()
else:
    raise ValueError(
        f"MOC_BACKEND={_requested!r}: expected 'numba', 'numpy' or 'auto'"
    )

BACKEND = "numba" if USE_NUMBA else "numpy"
