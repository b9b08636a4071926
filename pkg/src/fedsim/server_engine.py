"""Server side: delta aggregation, the four global update rules, control
variate bookkeeping, and the round-level diagnostics.

The diagnostics turn two structural facts about the local rule into
runtime checks:

  * decompose_round: the averaged client work of a round collapses to a
    single effective decay scalar mu_g and pseudo-gradient h, with
      x_new = (1 - mu_g) * x_prev - lambda_g * h
    reproducing the plain averaged update to 1e-9 (infinity norm).
  * check_norm_bound: under a norm-bounded step rule the global iterate
    can grow at most linearly, ||x_t|| <= ||x_0|| + lambda_g*tau*l_star*A*t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DiagnosticError
from .local_engine import RoundTrace
from .numkit import ParamVector, check_same_dim, norm2

DECOMP_TOL = 1e-9


class ServerOpt(str, Enum):
    AVG = "avg"
    AVGM = "avgm"
    ADAM = "adam"
    EXP = "exp"


@dataclass
class ServerState:
    """Mutable global optimizer state; single writer, one update per round."""

    x: np.ndarray
    lambda_g: float = 1.0
    optimizer: ServerOpt = ServerOpt.AVG
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-3
    server_momentum: float = 0.9
    exp_eps: float = 1e-3
    momentum_buf: np.ndarray = field(default=None)  # type: ignore[assignment]
    second_moment: np.ndarray = field(default=None)  # type: ignore[assignment]
    c_global: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.lambda_g <= 0:
            raise ValueError(f"lambda_g must be > 0, got {self.lambda_g}")
        self.x = np.asarray(self.x, dtype=np.float64).copy()
        for name in ("momentum_buf", "second_moment", "c_global"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(self.x))


@dataclass(frozen=True)
class DecompositionReport:
    """Effective global decay and pseudo-gradient of one round."""

    mu_g: float
    h: np.ndarray
    reconstruction_error: float


@dataclass(frozen=True)
class ClipStats:
    count: int
    mean_norm: float
    empty: bool


def aggregate(deltas: Sequence[ParamVector]) -> ParamVector:
    """Unweighted mean, summed sequentially in the order given (callers pass
    ascending client id, making the reduction canonical)."""
    if len(deltas) == 0:
        raise ValueError("cannot aggregate zero deltas")
    acc = np.zeros_like(deltas[0])
    for d in deltas:
        check_same_dim(acc, d)
        acc += d
    acc /= len(deltas)
    return acc


def global_update(
    state: ServerState,
    delta_bar: ParamVector,
    deltas: Sequence[ParamVector] | None = None,
) -> ServerState:
    """Apply one server-side update and advance the round counter.

    EXP needs the per-client deltas to size its adaptive step; the other
    rules use only the mean.
    """
    check_same_dim(state.x, delta_bar)
    opt = state.optimizer
    if opt is ServerOpt.AVG:
        state.x = state.x - state.lambda_g * delta_bar
    elif opt is ServerOpt.AVGM:
        state.momentum_buf = state.server_momentum * state.momentum_buf + delta_bar
        state.x = state.x - state.lambda_g * state.momentum_buf
    elif opt is ServerOpt.ADAM:
        steps = state.t + 1
        state.momentum_buf = (
            state.beta1 * state.momentum_buf + (1.0 - state.beta1) * delta_bar
        )
        state.second_moment = (
            state.beta2 * state.second_moment + (1.0 - state.beta2) * delta_bar**2
        )
        m_hat = state.momentum_buf / (1.0 - state.beta1**steps)
        v_hat = state.second_moment / (1.0 - state.beta2**steps)
        state.x = state.x - state.lambda_g * m_hat / (np.sqrt(v_hat) + state.adam_eps)
    else:  # EXP
        if deltas is None or len(deltas) == 0:
            raise ValueError("EXP server rule needs the per-client deltas")
        sq_sum = 0.0
        for d in deltas:
            sq_sum += norm2(d) ** 2
        mean_sq = norm2(delta_bar) ** 2
        eta = max(1.0, sq_sum / (2.0 * len(deltas) * (mean_sq + state.exp_eps)))
        state.x = state.x - eta * delta_bar
    if not np.all(np.isfinite(state.x)):
        raise DiagnosticError(
            f"non-finite global iterate after round {state.t + 1} "
            f"({opt.value} update)"
        )
    state.t += 1
    return state


def scaffold_server_round(
    c_global: np.ndarray,
    client_variates: list[np.ndarray],
    participated: Sequence[int],
    deltas: Sequence[ParamVector],
    tau: int,
    l_eff: float,
) -> np.ndarray:
    """Refresh control variates after a round, without a second gradient pass.

    Each participant re-estimates its variate from its own update,
        c_i_new = c_i - c + delta_i / (tau * l_eff),
    and the global variate absorbs the average drift over ALL clients
    (non-participants contribute zero change).  client_variates is updated
    in place; the new global variate is returned.
    """
    if len(participated) == 0:
        raise ValueError("a round needs at least one participant")
    if len(participated) != len(deltas):
        raise ValueError(
            f"{len(participated)} participants but {len(deltas)} deltas"
        )
    scale = tau * l_eff
    if scale == 0:
        raise ValueError("tau * l_eff must be nonzero")
    M = len(client_variates)
    drift = np.zeros_like(c_global)
    for cid, delta in zip(participated, deltas):
        c_new = client_variates[cid] - c_global + delta / scale
        drift += c_new - client_variates[cid]
        client_variates[cid] = c_new
    return c_global + drift / M


def decompose_round(
    traces: Sequence[RoundTrace],
    x_prev: ParamVector,
    x_new_simulated: ParamVector,
    lambda_g: float,
    convention: str = "step",
    strict: bool = True,
) -> DecompositionReport:
    """Collapse a round's traces into (mu_g, h) and verify the identity

        x_new = (1 - mu_g) * x_prev - lambda_g * h

    against the simulated plain averaged update (x_prev - lambda_g * mean
    delta).  mu_g comes from the per-client products of survival factors
    (1 - mu_k); h re-weights each recorded gradient by the shrinkage the
    remaining local steps applied after it.

    convention selects the product range for that re-weighting: "step"
    starts at k+1 (what iterating the update rule actually yields);
    "printed" starts at k and is provably off by one factor — it is kept
    only so tests can demonstrate the failure.
    """
    if convention not in ("step", "printed"):
        raise ValueError(f"unknown convention {convention!r}")
    M = len(traces)
    if M == 0:
        raise ValueError("need at least one trace")
    dim = x_prev.shape[0]
    h = np.zeros(dim)
    product_sum = 0.0
    for tr in traces:
        tau = tr.tau
        survivors = 1.0 - tr.mus
        # suffix[j] = prod_{r=j}^{tau-1} survivors[r]; suffix[tau] = 1
        suffix = np.empty(tau + 1)
        suffix[tau] = 1.0
        for j in range(tau - 1, -1, -1):
            suffix[j] = survivors[j] * suffix[j + 1]
        product_sum += suffix[0]
        offset = 1 if convention == "step" else 0
        coeff = tr.lambdas * suffix[offset : offset + tau]
        h += coeff @ tr.grads
    h /= M
    mu_g = lambda_g - (lambda_g / M) * product_sum
    reconstructed = (1.0 - mu_g) * x_prev - lambda_g * h
    err = float(np.max(np.abs(reconstructed - x_new_simulated)))
    if strict and err > DECOMP_TOL:
        raise DiagnosticError(
            f"round decomposition reconstruction error {err:.3e} > {DECOMP_TOL:g} "
            f"(mu_g={mu_g!r}, convention={convention})"
        )
    return DecompositionReport(mu_g=mu_g, h=h, reconstruction_error=err)


def check_norm_bound(
    x_t: ParamVector,
    x_0: ParamVector,
    lambda_g: float,
    tau: int,
    A: float,
    l_star: float,
    t: int,
) -> tuple[bool, float]:
    """Linear-growth bound on the global iterate after t rounds.

    Returns (ok, slack) with slack = bound - ||x_t||; ok allows 1e-9 of
    accumulated roundoff.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    bound = norm2(x_0) + lambda_g * tau * l_star * A * t
    current = norm2(x_t)
    return current <= bound + 1e-9, bound - current


def clip_stats(traces: Sequence[RoundTrace]) -> ClipStats:
    """Round totals: clipped-step count and mean pre-clip norm of those steps."""
    count = 0
    total = 0.0
    for tr in traces:
        mask = tr.clipped
        count += int(mask.sum())
        if mask.any():
            total += float(tr.pre_clip_norms[mask].sum())
    if count == 0:
        return ClipStats(count=0, mean_norm=0.0, empty=True)
    return ClipStats(count=count, mean_norm=total / count, empty=False)
