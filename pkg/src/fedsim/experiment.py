"""Experiment orchestration: configuration, the communication-round loop,
evaluation, and CSV metrics emission.

A run is fully determined by its config: every random draw flows from one
root seed through purpose-tagged stream paths, so repeated runs produce
byte-identical metrics except for the wall-clock column.
"""

from __future__ import annotations

import dataclasses
import math
import time
import typing
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import models
from .data import (
    Dataset,
    dirichlet_partition,
    load_csv,
    make_blobs,
    next_batch,
    sample_clients,
)
from .errors import ConfigError, DiagnosticError
from .local_engine import (
    ModifierKind,
    ObjectiveModifier,
    RoundTrace,
    Schedule,
    StepKind,
    StepRule,
    run_local,
    schedule_at,
)
from .models import Activation, Batch, Family, Model
from .numkit import EVAL_BATCH_TAG, RngStream, fd_gradient, norm2
from .server_engine import (
    ClipStats,
    ServerOpt,
    ServerState,
    aggregate,
    check_norm_bound,
    clip_stats,
    decompose_round,
    global_update,
    scaffold_server_round,
)

CSV_HEADER = (
    "round,train_loss,test_loss,test_acc,global_norm,mu_g,"
    "clip_count,clip_mean_norm,bound_slack,wall_ms"
)


class Backbone(str, Enum):
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    SCAFFOLD = "scaffold"
    FEDEXP = "fedexp"
    FEDADAM = "fedadam"
    FEDAVGM = "fedavgm"


# Each backbone is a (local objective modifier, server update rule) pair;
# the step rule (plain / gradclip / co-clip) plugs in orthogonally.
BACKBONE_PLUMBING: dict[Backbone, tuple[ModifierKind, ServerOpt]] = {
    Backbone.FEDAVG: (ModifierKind.NONE, ServerOpt.AVG),
    Backbone.FEDPROX: (ModifierKind.PROX, ServerOpt.AVG),
    Backbone.SCAFFOLD: (ModifierKind.SCAFFOLD, ServerOpt.AVG),
    Backbone.FEDEXP: (ModifierKind.NONE, ServerOpt.EXP),
    Backbone.FEDADAM: (ModifierKind.NONE, ServerOpt.ADAM),
    Backbone.FEDAVGM: (ModifierKind.NONE, ServerOpt.AVGM),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat, fully-defaulted run description (see README for the key table)."""

    seed: int = 0
    dataset: str = "blobs"
    blobs_classes: int = 10
    blobs_per_class: int = 100
    blobs_dim: int = 32
    blobs_separation: float = 6.0
    blobs_noise: float = 1.4
    csv_path: str = ""
    csv_test_path: str = ""
    model: str = "mlp_one_hidden"
    hidden: int = 64
    activation: str = "tanh"
    clients: int = 50
    clients_per_round: int = 10
    alpha: float = 0.3
    rounds: int = 120
    tau: int = 10
    batch_size: int = 32
    backbone: str = "fedavg"
    rule: str = "fednar"
    l0: float = 0.01
    rho: float = 0.998
    u0: float = 0.01
    # Weight decay anneals much faster than the learning rate: at this
    # horizon the initial decay must finish its work (and get out of the
    # way) within the first ~40 rounds or it dominates the tiny
    # gradient steps and drags the model to zero.
    gamma: float = 0.83
    max_norm: float = 10.0
    lambda_g: float = 1.0
    prox_mu: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-3
    server_momentum: float = 0.9
    exp_eps: float = 1e-3
    check_decomposition: bool = True
    check_norm_bound: bool = True
    record_clip_stats: bool = True
    record_iterates: bool = False
    eval_every: int = 10


@dataclass(frozen=True)
class MetricsRow:
    round: int
    train_loss: float
    test_loss: float
    test_acc: float
    global_norm: float
    mu_g: float
    clip_count: int
    clip_mean_norm: float
    bound_slack: float
    wall_ms: float


_FIELD_TYPES = typing.get_type_hints(ExperimentConfig)
_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def coerce_value(key: str, raw: str) -> object:
    """Parse one raw config token into the declared field type."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if ftype is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse flat `key = value` lines (# comments, blank lines allowed)."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected `key = value`, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        try:
            values[key] = coerce_value(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    config = ExperimentConfig(**values)  # type: ignore[arg-type]
    validate_config(config)
    return config


def parse_config_file(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    return parse_config(text, source=path)


def config_with(config: ExperimentConfig, key: str, raw: str) -> ExperimentConfig:
    """A copy of `config` with one key overridden from its raw text form."""
    swapped = dataclasses.replace(config, **{key: coerce_value(key, raw)})
    validate_config(swapped)
    return swapped


def _enum_of(enum_cls, raw: str, what: str):
    try:
        return enum_cls(raw)
    except ValueError:
        choices = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"{what} must be one of: {choices}; got {raw!r}") from None


def validate_config(config: ExperimentConfig) -> None:
    if config.dataset not in ("blobs", "csv"):
        raise ConfigError(f"dataset must be 'blobs' or 'csv', got {config.dataset!r}")
    if config.dataset == "csv" and not config.csv_path:
        raise ConfigError("dataset = csv requires csv_path")
    family = _enum_of(Family, config.model, "model")
    if config.activation not in ("tanh", "relu"):
        raise ConfigError(f"activation must be 'tanh' or 'relu', got {config.activation!r}")
    _enum_of(Backbone, config.backbone, "backbone")
    rule_kind = _enum_of(StepKind, config.rule, "rule")
    if config.clients < 1:
        raise ConfigError(f"clients must be >= 1, got {config.clients}")
    if not 1 <= config.clients_per_round <= config.clients:
        raise ConfigError(
            f"clients_per_round = {config.clients_per_round} must lie in "
            f"[1, clients = {config.clients}]"
        )
    for key in ("rounds", "tau", "batch_size", "eval_every"):
        if getattr(config, key) < 1:
            raise ConfigError(f"{key} must be >= 1, got {getattr(config, key)}")
    if config.alpha <= 0:
        raise ConfigError(f"alpha must be > 0, got {config.alpha}")
    if config.lambda_g <= 0:
        raise ConfigError(f"lambda_g must be > 0, got {config.lambda_g}")
    if config.prox_mu < 0:
        raise ConfigError(f"prox_mu must be >= 0, got {config.prox_mu}")
    if family is Family.MLP_ONE_HIDDEN and config.hidden < 1:
        raise ConfigError(f"hidden must be >= 1, got {config.hidden}")
    if config.dataset == "blobs":
        if config.blobs_classes < 2:
            raise ConfigError(f"blobs_classes must be >= 2, got {config.blobs_classes}")
        if config.blobs_per_class < 1 or config.blobs_dim < 1:
            raise ConfigError(
                f"blobs_per_class = {config.blobs_per_class} and blobs_dim = "
                f"{config.blobs_dim} must be >= 1"
            )
        if config.blobs_separation <= 0 or config.blobs_noise <= 0:
            raise ConfigError("blobs_separation and blobs_noise must be > 0")
    try:
        Schedule(config.l0, config.rho, config.u0, config.gamma)
        StepRule(rule_kind, config.max_norm)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_data(
    config: ExperimentConfig, root: RngStream
) -> tuple[Dataset, Dataset | None]:
    """(train, test); test is None for CSV runs without a test file, in
    which case evaluation falls back to the TRAIN set."""
    if config.dataset == "blobs":
        return make_blobs(
            config.blobs_classes,
            config.blobs_per_class,
            config.blobs_dim,
            config.blobs_separation,
            config.blobs_noise,
            root,
        )
    train = load_csv(config.csv_path)
    test = load_csv(config.csv_test_path) if config.csv_test_path else None
    return train, test


def build_model(config: ExperimentConfig, train: Dataset) -> Model:
    family = Family(config.model)
    if family is Family.LINEAR_REGRESSION:
        return Model(family, d_in=train.d_in)
    if family is Family.MULTINOMIAL_LOGISTIC:
        return Model(family, d_in=train.d_in, n_classes=train.n_classes)
    return Model(
        family,
        d_in=train.d_in,
        n_classes=train.n_classes,
        hidden=config.hidden,
        activation=Activation.TANH if config.activation == "tanh" else Activation.RELU,
    )


def evaluate(model: Model, params, dataset: Dataset) -> tuple[float, float]:
    """Mean loss and argmax accuracy over a full dataset (accuracy is NaN
    for single-output regression heads)."""
    batch = Batch(dataset.features, dataset.labels)
    val = models.loss(model, params, batch)
    out = models.logits(model, params, dataset.features)
    if out.ndim == 1:
        return val, math.nan
    preds = np.argmax(out, axis=1)
    return val, float(np.mean(preds == dataset.labels))


def run_experiment(
    config: ExperimentConfig,
    on_round: Callable[[int, Sequence[RoundTrace]], None] | None = None,
) -> list[MetricsRow]:
    """Execute a full run; returns one MetricsRow per evaluated round.

    Evaluation happens every `eval_every` rounds and always on the final
    round.  `on_round` (optional) observes each round's traces before they
    are discarded — used by tests and diagnostics, never by the CLI.
    Diagnostic failures abort with the failing round named.
    """
    validate_config(config)
    root = RngStream(config.seed)
    train, test = build_data(config, root)
    eval_set = test if test is not None else train
    if config.clients > train.size:
        raise ConfigError(
            f"clients = {config.clients} exceeds TRAIN size {train.size}"
        )
    partition = dirichlet_partition(train, config.clients, config.alpha, root)
    model = build_model(config, train)
    x_init = models.init_params(model, root)
    x0 = x_init.copy()

    schedule = Schedule(config.l0, config.rho, config.u0, config.gamma)
    rule = StepRule(StepKind(config.rule), config.max_norm)
    backbone = Backbone(config.backbone)
    mod_kind, opt = BACKBONE_PLUMBING[backbone]
    server = ServerState(
        x_init,
        lambda_g=config.lambda_g,
        optimizer=opt,
        beta1=config.beta1,
        beta2=config.beta2,
        adam_eps=config.adam_eps,
        server_momentum=config.server_momentum,
        exp_eps=config.exp_eps,
    )
    variates: list[np.ndarray] = []
    c_global = np.zeros_like(x0)
    if mod_kind is ModifierKind.SCAFFOLD:
        variates = [np.zeros_like(x0) for _ in range(config.clients)]

    rows: list[MetricsRow] = []
    for r in range(config.rounds):
        t_start = time.perf_counter()
        is_eval = ((r + 1) % config.eval_every == 0) or (r + 1 == config.rounds)
        ids = sample_clients(config.clients, config.clients_per_round, r, root)
        round_rng = root.child(r)
        l_t, _ = schedule_at(schedule, r)

        train_loss = math.nan
        if is_eval:
            losses = []
            for i in ids:
                probe = next_batch(
                    partition.shards[i], train, config.batch_size,
                    round_rng, EVAL_BATCH_TAG,
                )
                losses.append(models.loss(model, server.x, probe))
            train_loss = float(np.mean(losses))

        deltas = []
        traces = []
        for i in ids:
            if mod_kind is ModifierKind.PROX:
                mod = ObjectiveModifier(ModifierKind.PROX, prox_mu=config.prox_mu)
            elif mod_kind is ModifierKind.SCAFFOLD:
                mod = ObjectiveModifier(
                    ModifierKind.SCAFFOLD, c_i=variates[i], c=c_global
                )
            else:
                mod = ObjectiveModifier(ModifierKind.NONE)
            delta, trace = run_local(
                model, train, partition.shards[i], server.x, r, config.tau,
                rule, schedule, mod, config.batch_size, round_rng,
                config.record_iterates,
            )
            deltas.append(delta)
            traces.append(trace)
        delta_bar = aggregate(deltas)

        mu_g = math.nan
        if config.check_decomposition:
            x_sim = server.x - config.lambda_g * delta_bar
            try:
                report = decompose_round(
                    traces, server.x, x_sim, config.lambda_g
                )
            except DiagnosticError as exc:
                raise DiagnosticError(f"round {r + 1}: {exc}") from None
            mu_g = report.mu_g

        if on_round is not None:
            on_round(r, traces)

        if mod_kind is ModifierKind.SCAFFOLD:
            c_global = scaffold_server_round(
                c_global, variates, ids, deltas, config.tau, l_t
            )
        global_update(server, delta_bar, deltas)

        bound_slack = math.nan
        if config.check_norm_bound and rule.kind is not StepKind.PLAIN_WD:
            ok, slack = check_norm_bound(
                server.x, x0, config.lambda_g, config.tau,
                config.max_norm, schedule.l0, server.t,
            )
            bound_slack = slack
            # The linear-growth bound models the plain averaged server
            # update; momentum/adaptive servers can legitimately outrun it,
            # so those only record the slack.
            if rule.kind is StepKind.FEDNAR and opt is ServerOpt.AVG and not ok:
                raise DiagnosticError(
                    f"round {r + 1}: global-norm bound violated "
                    f"(||x|| = {norm2(server.x)!r}, slack = {slack!r})"
                )

        if is_eval:
            test_loss, test_acc = evaluate(model, server.x, eval_set)
            stats = (
                clip_stats(traces)
                if config.record_clip_stats
                else ClipStats(0, 0.0, True)
            )
            rows.append(
                MetricsRow(
                    round=r + 1,
                    train_loss=train_loss,
                    test_loss=test_loss,
                    test_acc=test_acc,
                    global_norm=norm2(server.x),
                    mu_g=mu_g,
                    clip_count=stats.count,
                    clip_mean_norm=stats.mean_norm,
                    bound_slack=bound_slack,
                    wall_ms=(time.perf_counter() - t_start) * 1e3,
                )
            )
    return rows


def _fmt(v: float) -> str:
    return "%.9g" % v


def emit_metrics_csv(rows: Sequence[MetricsRow], path: str) -> None:
    """Write rows under the fixed header, reals at 9 significant digits."""
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(CSV_HEADER + "\n")
            for row in rows:
                fh.write(
                    ",".join(
                        (
                            str(row.round),
                            _fmt(row.train_loss),
                            _fmt(row.test_loss),
                            _fmt(row.test_acc),
                            _fmt(row.global_norm),
                            _fmt(row.mu_g),
                            str(row.clip_count),
                            _fmt(row.clip_mean_norm),
                            _fmt(row.bound_slack),
                            _fmt(row.wall_ms),
                        )
                    )
                    + "\n"
                )
    except OSError as exc:
        raise ConfigError(f"cannot write metrics to {path!r}: {exc}") from None


def rows_without_wall_ms(rows: Sequence[MetricsRow]) -> list[tuple]:
    """Comparable view of metrics rows with the timing column dropped."""
    return [
        (
            row.round,
            _fmt(row.train_loss),
            _fmt(row.test_loss),
            _fmt(row.test_acc),
            _fmt(row.global_norm),
            _fmt(row.mu_g),
            row.clip_count,
            _fmt(row.clip_mean_norm),
            _fmt(row.bound_slack),
        )
        for row in rows
    ]


# ---------------------------------------------------------------------------
# Built-in verification (the `check` subcommand)
# ---------------------------------------------------------------------------

def _random_problem(family: Family, gen: np.random.Generator):
    """A small random (model, params, batch) triple for gradient checking."""
    n, d = 8, 5
    X = gen.normal(size=(n, d))
    if family is Family.LINEAR_REGRESSION:
        model = Model(family, d_in=d)
        batch = Batch(X, gen.normal(size=n))
    elif family is Family.MULTINOMIAL_LOGISTIC:
        model = Model(family, d_in=d, n_classes=4)
        batch = Batch(X, gen.integers(0, 4, size=n))
    else:
        act = Activation.TANH if gen.integers(2) == 0 else Activation.RELU
        model = Model(family, d_in=d, n_classes=4, hidden=6, activation=act)
        batch = Batch(X, gen.integers(0, 4, size=n))
    params = gen.normal(scale=0.8, size=model.param_dim)
    return model, params, batch


def _relu_probe_near_kink(model: Model, params, batch: Batch) -> bool:
    if (
        model.family is Family.MLP_ONE_HIDDEN
        and model.activation is Activation.RELU
    ):
        pre = models.hidden_preactivations(model, params, batch.features)
        return bool(np.min(np.abs(pre)) < 1e-3)
    return False


def gradient_check(
    family: Family, draws: int, seed: int = 0, rel_tol: float = 1e-5
) -> float:
    """Worst relative error between analytic and central-difference
    gradients over `draws` random problems; raises on tolerance breach."""
    gen = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < draws:
        model, params, batch = _random_problem(family, gen)
        if _relu_probe_near_kink(model, params, batch):
            continue  # resample: fd probes must stay off the ReLU kink
        g = models.grad(model, params, batch)
        g_fd = fd_gradient(model, params, batch)
        rel = norm2(g_fd - g) / max(1.0, norm2(g))
        worst = max(worst, rel)
        if rel > rel_tol:
            raise DiagnosticError(
                f"{family.value}: gradient vs finite differences rel err "
                f"{rel:.3e} > {rel_tol:g}"
            )
        done += 1
    return worst


def run_self_check(log=print) -> None:
    """Condensed end-to-end verification; raises DiagnosticError on failure.

    Covers: analytic gradients vs finite differences, the round
    decomposition identity (full and partial participation), per-step and
    global norm bounds across a small (u0, max_norm) grid, the zero-decay
    coincidence of the co-clipped and gradient-clipped rules, and one-step
    recovery of plain SGD.
    """
    for family in Family:
        worst = gradient_check(family, draws=5, seed=11)
        log(f"ok: {family.value} gradient matches finite differences "
            f"(worst rel err {worst:.2e})")

    small = ExperimentConfig(
        seed=3, blobs_classes=4, blobs_per_class=30, blobs_dim=8,
        hidden=10, clients=6, clients_per_round=6, rounds=8, tau=3,
        batch_size=8, rule="fednar", eval_every=4,
    )

    def step_bound_watcher(A: float):
        def watch(r: int, traces) -> None:
            for tr in traces:
                if np.any(tr.step_norms > tr.l_t * A + 1e-12):
                    raise DiagnosticError(
                        f"round {r + 1}: applied-step norm exceeds l_t * max_norm"
                    )
        return watch

    run_experiment(small, on_round=step_bound_watcher(small.max_norm))
    run_experiment(dataclasses.replace(small, clients_per_round=3))
    log("ok: round decomposition reconstructs the averaged update "
        "(full and partial participation)")

    for u0 in (0.0, 0.01, 0.1):
        for A in (1.0, 10.0):
            cfg = dataclasses.replace(small, u0=u0, max_norm=A, rounds=4)
            run_experiment(cfg, on_round=step_bound_watcher(A))
    log("ok: step and global norm bounds hold across the (u0, max_norm) grid")

    a = dataclasses.replace(small, rule="fednar", u0=0.0)
    b = dataclasses.replace(small, rule="gradclip_wd", u0=0.0)
    if rows_without_wall_ms(run_experiment(a)) != rows_without_wall_ms(
        run_experiment(b)
    ):
        raise DiagnosticError(
            "zero-decay runs of the co-clipped and gradient-clipped rules differ"
        )
    log("ok: co-clipping collapses to gradient clipping at zero weight decay")

    root = RngStream(17)
    train, _ = make_blobs(3, 12, 4, 4.0, 1.0, root)
    partition = dirichlet_partition(train, 1, 1.0, root)
    model = Model(Family.MULTINOMIAL_LOGISTIC, d_in=4, n_classes=3)
    x_start = models.init_params(model, root)
    sched = Schedule(l0=0.05, rho=1.0, u0=0.0, gamma=1.0)
    delta, _ = run_local(
        model, train, partition.shards[0], x_start, 0, 1,
        StepRule(StepKind.PLAIN_WD), sched, ObjectiveModifier(ModifierKind.NONE),
        8, root.child(0),
    )
    probe = next_batch(partition.shards[0], train, 8, root.child(0), 0)
    expect = x_start - sched.l0 * models.grad(model, x_start, probe)
    if not np.array_equal(x_start - delta, expect):
        raise DiagnosticError("single local step does not reproduce plain SGD")
    log("ok: plain rule with constant schedule reproduces an SGD step exactly")
