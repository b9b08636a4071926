"""Local training: schedules, the three step rules, objective modifiers,
and the multi-step client loop with full trace recording.

The local update is always

    x_k = (1 - mu_{k-1}) * x_{k-1} - lambda_{k-1} * g_{k-1}

and the three rules differ only in how (lambda, mu) are produced each step:

    PLAIN_WD     lambda = l_t, mu = u_t, no clipping.
    GRADCLIP_WD  lambda = l_t * A / ||g|| when ||g|| > A, mu = u_t always
                 (the decay term is NOT rescaled).
    FEDNAR       joint rescale: with n = ||g + (u_t/l_t) x||, when n > A
                 both coefficients shrink by A/n, so the whole step
                 lambda*g + mu*x is norm-bounded by l_t * A.

Traces record per-step (lambda, mu, g, pre-clip norm, applied-step norm),
which is everything the server-side decomposition diagnostics need.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import isfinite

import numpy as np

from .data import ClientShard, Dataset, next_batch
from .errors import DiagnosticError
from .models import Model, grad
from .numkit import ParamVector, RngStream, check_same_dim, lin_comb, norm2

COND1_TOL = 1e-12


@dataclass(frozen=True)
class Schedule:
    """Per-round exponential schedules l_t = l0*rho^t, u_t = u0*gamma^t."""

    l0: float = 0.01
    rho: float = 0.998
    u0: float = 0.01
    gamma: float = 0.998

    def __post_init__(self) -> None:
        if self.l0 <= 0:
            raise ValueError(f"l0 must be > 0, got {self.l0}")
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.u0 < 0:
            raise ValueError(f"u0 must be >= 0, got {self.u0}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")


def schedule_at(schedule: Schedule, t: int) -> tuple[float, float]:
    """(l_t, u_t) for 0-based round t; round 0 returns (l0, u0) exactly."""
    if t < 0:
        raise ValueError(f"round index must be >= 0, got {t}")
    return schedule.l0 * schedule.rho**t, schedule.u0 * schedule.gamma**t


class StepKind(str, Enum):
    PLAIN_WD = "plain_wd"
    GRADCLIP_WD = "gradclip_wd"
    FEDNAR = "fednar"


@dataclass(frozen=True)
class StepRule:
    kind: StepKind
    max_norm: float = 10.0

    def __post_init__(self) -> None:
        if self.kind is not StepKind.PLAIN_WD and self.max_norm <= 0:
            raise ValueError(
                f"max_norm must be > 0 for {self.kind.value}, got {self.max_norm}"
            )


class ModifierKind(str, Enum):
    NONE = "none"
    PROX = "prox"
    SCAFFOLD = "scaffold"


@dataclass(frozen=True)
class ObjectiveModifier:
    """Optional reshaping of the local gradient before the step rule sees it."""

    kind: ModifierKind = ModifierKind.NONE
    prox_mu: float = 0.0
    c_i: np.ndarray | None = None
    c: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.prox_mu < 0:
            raise ValueError(f"prox_mu must be >= 0, got {self.prox_mu}")


@dataclass(frozen=True)
class RoundTrace:
    """Everything one client did in one round, step by step.

    step_norms holds ||lambda_k g_k + mu_k x_k|| — the norm of the applied
    step, recorded unconditionally so boundedness can be audited for any
    rule.  cond1_violations counts steps where that norm exceeded
    l_t * max_norm + tolerance (always 0 for FEDNAR, which hard-errors
    instead; informational for GRADCLIP_WD, whose unclipped decay term can
    push the step past the bound).
    """

    client_id: int
    round_index: int
    l_t: float
    u_t: float
    lambdas: np.ndarray
    mus: np.ndarray
    grads: np.ndarray
    pre_clip_norms: np.ndarray
    clipped: np.ndarray
    step_norms: np.ndarray
    cond1_violations: int
    iterates: tuple[np.ndarray, ...] | None = None

    @property
    def tau(self) -> int:
        return int(self.lambdas.shape[0])


def nar_coefficients(
    g: ParamVector, x: ParamVector, l_t: float, u_t: float, A: float
) -> tuple[float, float, float, bool]:
    """Jointly clipped (lambda, mu) plus the pre-clip norm and clip flag.

    Both coefficients shrink by the same factor A/n, so mu/lambda always
    equals u_t/l_t and the applied step obeys ||lambda g + mu x|| <= l_t*A.
    """
    check_same_dim(g, x)
    if u_t == 0.0:
        v = g  # exact GRADCLIP_WD coincidence at zero decay
    else:
        v = g + (u_t / l_t) * x
    n = norm2(v)
    if not isfinite(n):
        raise DiagnosticError(f"non-finite step norm {n!r}")
    if n > A:
        return l_t * A / n, u_t * A / n, n, True
    return l_t, u_t, n, False


def clip_coefficients(
    g: ParamVector, l_t: float, u_t: float, A: float
) -> tuple[float, float, float, bool]:
    """Gradient-norm clipping only: mu stays u_t whatever happens."""
    n = norm2(g)
    if not isfinite(n):
        raise DiagnosticError(f"non-finite gradient norm {n!r}")
    if n > A:
        return l_t * A / n, u_t, n, True
    return l_t, u_t, n, False


def local_step(
    x: ParamVector, g: ParamVector, lam: float, mu: float
) -> ParamVector:
    """(1 - mu) * x - lam * g."""
    return lin_comb(1.0 - mu, x, -lam, g)


def modified_gradient(
    mod: ObjectiveModifier, g: ParamVector, x: ParamVector, x0: ParamVector
) -> ParamVector:
    if mod.kind is ModifierKind.NONE:
        return g
    if mod.kind is ModifierKind.PROX:
        return g + mod.prox_mu * (x - x0)
    if mod.c_i is None or mod.c is None:
        raise ValueError(
            "SCAFFOLD control variates must be explicitly zero-initialized"
        )
    check_same_dim(g, mod.c_i)
    check_same_dim(g, mod.c)
    return g - mod.c_i + mod.c


def run_local(
    model: Model,
    dataset: Dataset,
    shard: ClientShard,
    x_global: ParamVector,
    t: int,
    tau: int,
    rule: StepRule,
    schedule: Schedule,
    mod: ObjectiveModifier,
    batch_size: int,
    rng: RngStream,
    record_iterates: bool = False,
) -> tuple[ParamVector, RoundTrace]:
    """Run tau local steps for one client; return (delta, trace).

    delta = x_global - x_tau, i.e. the update the client sends back.
    `rng` must be the round-scoped stream (batches key on client and step).
    FEDNAR steps are hard-asserted to satisfy the boundedness contract
    ||lambda g + mu x|| <= l_t * max_norm; a violation means the rule is
    implemented wrong, so it aborts rather than records.
    """
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    l_t, u_t = schedule_at(schedule, t)
    dim = x_global.shape[0]
    lambdas = np.empty(tau)
    mus = np.empty(tau)
    grads = np.empty((tau, dim))
    pre_norms = np.empty(tau)
    clipped = np.zeros(tau, dtype=bool)
    step_norms = np.empty(tau)
    iterates: list[np.ndarray] | None = [] if record_iterates else None
    violations = 0
    bound = l_t * rule.max_norm

    x = x_global.copy()
    for k in range(tau):
        batch = next_batch(shard, dataset, batch_size, rng, k)
        g = modified_gradient(mod, grad(model, x, batch), x, x_global)
        if rule.kind is StepKind.FEDNAR:
            lam, mu, n, was_clipped = nar_coefficients(
                g, x, l_t, u_t, rule.max_norm
            )
        elif rule.kind is StepKind.GRADCLIP_WD:
            lam, mu, n, was_clipped = clip_coefficients(
                g, l_t, u_t, rule.max_norm
            )
        else:
            lam, mu, n, was_clipped = l_t, u_t, norm2(g), False
        s = norm2(lin_comb(lam, g, mu, x))
        if rule.kind is StepKind.FEDNAR and s > bound + COND1_TOL:
            raise DiagnosticError(
                f"client {shard.client_id} step {k}: applied-step norm {s!r} "
                f"exceeds l_t*max_norm = {bound!r}"
            )
        if rule.kind is StepKind.GRADCLIP_WD and s > bound + COND1_TOL:
            violations += 1
        lambdas[k] = lam
        mus[k] = mu
        grads[k] = g
        pre_norms[k] = n
        clipped[k] = was_clipped
        step_norms[k] = s
        if iterates is not None:
            iterates.append(x.copy())
        x = local_step(x, g, lam, mu)

    trace = RoundTrace(
        client_id=shard.client_id,
        round_index=t,
        l_t=l_t,
        u_t=u_t,
        lambdas=lambdas,
        mus=mus,
        grads=grads,
        pre_clip_norms=pre_norms,
        clipped=clipped,
        step_norms=step_norms,
        cond1_violations=violations,
        iterates=tuple(iterates) if iterates is not None else None,
    )
    return x_global - x, trace
