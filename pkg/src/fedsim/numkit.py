"""Dense parameter-vector arithmetic, splittable seeded RNG streams, and a
finite-difference gradient oracle.

Parameter vectors are plain 1-D float64 numpy arrays. Everything here is a
pure function of its inputs; RNG streams are addressed by (root_seed, path)
so any draw can be replayed without shared mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError

ParamVector = np.ndarray

# Purpose tags used as stream-path components. Values only need to be
# distinct from each other and from ordinary round/client/step indices at
# the same path position.
DATA_TAG = 1_000_001
PARTITION_TAG = 1_000_002
INIT_TAG = 1_000_003
CLIENT_SAMPLE_TAG = 1_000_004
EVAL_BATCH_TAG = 1_000_005


def as_params(values: Sequence[float] | np.ndarray) -> ParamVector:
    """Validate and convert to a 1-D float64 parameter vector.

    Raises ValueError on empty or non-finite input and
    DimensionMismatchError when the input is not 1-D.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatchError(
            f"parameter vector must be 1-D, got shape {v.shape}"
        )
    if v.size == 0:
        raise ValueError("parameter vector must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ValueError("parameter vector contains non-finite values")
    return v


def check_same_dim(u: ParamVector, v: ParamVector) -> None:
    if u.shape != v.shape:
        raise DimensionMismatchError(
            f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}"
        )


def lin_comb(a: float, u: ParamVector, b: float, v: ParamVector) -> ParamVector:
    """Element-wise a*u + b*v. Dimensions must agree."""
    check_same_dim(u, v)
    return a * u + b * v


def norm2(v: ParamVector) -> float:
    """Euclidean norm."""
    return float(np.linalg.norm(v))


@dataclass(frozen=True)
class RngStream:
    """A named point in a tree of independent random streams.

    Two streams with identical (root_seed, path) replay the same sequence;
    streams with different paths are statistically independent. Backed by
    numpy's SeedSequence spawn keys, so child streams are derivable anywhere
    without coordination.
    """

    root_seed: int
    path: tuple[int, ...] = ()

    def child(self, *parts: int) -> "RngStream":
        return RngStream(self.root_seed, self.path + tuple(int(p) for p in parts))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(self.root_seed, spawn_key=self.path)
        return np.random.default_rng(seq)


def central_difference(
    f: Callable[[ParamVector], float], params: ParamVector, h: float = 1e-5
) -> ParamVector:
    """Central-difference gradient of a scalar function of the parameters.

    Uses (f(p + h e_i) - f(p - h e_i)) / (2h) per coordinate. Raises on a
    non-finite function value at any probe point.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    p = np.array(params, dtype=np.float64, copy=True)
    g = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + h
        fp = f(p)
        p[i] = orig - h
        fm = f(p)
        p[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"non-finite loss at coordinate {i} during fd probe")
        g[i] = (fp - fm) / (2.0 * h)
    return g


def fd_gradient(model, params: ParamVector, batch, h: float = 1e-5):
    """Finite-difference gradient of a model's batch loss.

    Independent oracle for the analytic gradients in fedsim.models; see
    central_difference for the stencil.
    """
    from .models import loss  # local import avoids a module cycle

    return central_difference(lambda p: loss(model, p, batch), params, h=h)
