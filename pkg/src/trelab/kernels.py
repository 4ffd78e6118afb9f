"""Kernel backend selection.

Two interchangeable implementations of the hot numeric kernels exist: a
compiled Cython extension (``trelab._kernels``) and a NumPy fallback
(``trelab._kernels_np``). The compiled one is preferred when importable.
Set ``TRELAB_KERNELS=python`` or ``TRELAB_KERNELS=compiled`` to force a
choice; forcing the compiled backend when the extension failed to build is
a configuration error.

``set_backend``/``use_backend`` exist for tests and the benchmark harness;
normal code just calls the module-level functions.
"""

import contextlib
import os

from . import _kernels_np
from .errors import ConfigError

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"python": _kernels_np}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_ALIASES = {
    "python": "python", "py": "python", "numpy": "python",
    "compiled": "compiled", "c": "compiled", "cython": "compiled",
}


def _initial_backend() -> str:
    forced = os.environ.get("TRELAB_KERNELS", "").strip().lower()
    if not forced:
        return "compiled" if _compiled is not None else "python"
    if forced not in _ALIASES:
        raise ConfigError(f"TRELAB_KERNELS={forced!r} is not a known backend "
                          f"(choose from {sorted(set(_ALIASES.values()))})")
    name = _ALIASES[forced]
    if name not in _BACKENDS:
        raise ConfigError("TRELAB_KERNELS requested the compiled backend but "
                          "the trelab._kernels extension is not built")
    return name


_active_name = _initial_backend()
_active = _BACKENDS[_active_name]


def backend_name() -> str:
    return _active_name


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> str:
    """Switch the active backend; returns the previous backend name."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ConfigError(f"unknown kernel backend {name!r} "
                          f"(available: {available_backends()})")
    previous = _active_name
    _active_name = name
    _active = _BACKENDS[name]
    return previous


@contextlib.contextmanager
def use_backend(name: str):
    previous = set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def gelu_fwd(x):
    return _active.gelu_fwd(x)


def gelu_bwd(x, gy):
    return _active.gelu_bwd(x, gy)


def softmax_rows(x):
    return _active.softmax_rows(x)


def softmax_rows_bwd(p, gy):
    return _active.softmax_rows_bwd(p, gy)


def causal_softmax_rows(x):
    return _active.causal_softmax_rows(x)


def layernorm_fwd(x, gain, bias, eps):
    return _active.layernorm_fwd(x, gain, bias, eps)


def layernorm_bwd(x, gain, mean, rstd, gy):
    return _active.layernorm_bwd(x, gain, mean, rstd, gy)


def cross_entropy_fwd(logits, targets, ignore_id):
    return _active.cross_entropy_fwd(logits, targets, ignore_id)


def cross_entropy_bwd(probs, targets, ignore_id, nvalid, gscalar):
    return _active.cross_entropy_bwd(probs, targets, ignore_id, nvalid, gscalar)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    return _active.adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2)
