"""Loss/gradient kernel dispatch.

Two interchangeable backends implement the same math:

  "compiled" -- Cython extension (_speedups), built by setup.py
  "python"   -- numpy reference (pyref), always available

The compiled backend is selected at import when present; set
FEDSIM_BACKEND=python|compiled to force a choice. The two backends agree to
floating-point roundoff but not bit-for-bit (different summation orders), so
anything that relies on bit-level determinism must stay on one backend for
the comparison -- which is automatic within a single process.
"""

from __future__ import annotations

import os

from . import pyref

_BACKENDS = {"python": pyref}

try:
    from . import _speedups  # type: ignore[attr-defined]

    _BACKENDS["compiled"] = _speedups
except ImportError:
    _speedups = None

_env = os.environ.get("FEDSIM_BACKEND")
if _env:
    if _env not in _BACKENDS:
        raise ImportError(
            f"FEDSIM_BACKEND={_env!r} not available; choices: {sorted(_BACKENDS)}"
        )
    _active = _BACKENDS[_env]
else:
    _active = _BACKENDS.get("compiled", pyref)

ACT_TANH = pyref.ACT_TANH
ACT_RELU = pyref.ACT_RELU


def backend_name() -> str:
    for name, mod in _BACKENDS.items():
        if mod is _active:
            return name
    raise AssertionError("active backend not registered")


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def use_backend(name: str) -> None:
    """Switch the active backend (benchmarks and cross-checks only).

    Switching mid-run changes roundoff behaviour of subsequent gradient
    calls; normal runs should never call this.
    """
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choices: {sorted(_BACKENDS)}")
    _active = _BACKENDS[name]


def get_backend(name: str):
    return _BACKENDS[name]


def linreg_loss_grad(params, X, y):
    return _active.linreg_loss_grad(params, X, y)


def logistic_loss_grad(params, X, y, n_classes):
    return _active.logistic_loss_grad(params, X, y, n_classes)


def mlp_ce_loss_grad(params, X, y, hidden, n_classes, activation):
    return _active.mlp_ce_loss_grad(params, X, y, hidden, n_classes, activation)


def mlp_mse_loss_grad(params, X, y, hidden, activation):
    return _active.mlp_mse_loss_grad(params, X, y, hidden, activation)
