"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled module is used when it imports; set ``TORUSFLOW_BACKEND=python``
to force the fallback (benchmarks and cross-backend tests do this per call
through :func:`get_backend`).
"""
import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_requested = os.environ.get("TORUSFLOW_BACKEND", "").strip().lower()
if _requested and _requested not in _BACKENDS:
    raise ImportError(f"torusflow backend {_requested!r} is not available")
BACKEND = _requested or ("cython" if _ckernels is not None else "python")
_impl = _BACKENDS[BACKEND]


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Return the kernel module ``name`` (default: the active one)."""
    return _BACKENDS[name or BACKEND]


def _c3(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def noise_displacement(pos, kvecs, amp, noise, backend=None):
    mod = get_backend(backend)
    return mod.noise_displacement(_c3(pos), _c3(kvecs), _c3(amp), _c3(noise))


def mode_integrals(g, gt, kvecs, backend=None):
    mod = get_backend(backend)
    return mod.mode_integrals(_c3(g), _c3(gt), _c3(kvecs))
