"""fedsim: a deterministic federated-optimization simulator with co-clipped
adaptive weight decay and built-in theory diagnostics."""

from .data import (
    ClientShard,
    Dataset,
    Partition,
    Split,
    dirichlet_partition,
    load_csv,
    make_blobs,
    next_batch,
    sample_clients,
    save_csv,
)
from .errors import ConfigError, DiagnosticError, DimensionMismatchError
from .experiment import (
    Backbone,
    ExperimentConfig,
    MetricsRow,
    emit_metrics_csv,
    evaluate,
    parse_config,
    parse_config_file,
    run_experiment,
    run_self_check,
)
from .local_engine import (
    ModifierKind,
    ObjectiveModifier,
    RoundTrace,
    Schedule,
    StepKind,
    StepRule,
    clip_coefficients,
    local_step,
    modified_gradient,
    nar_coefficients,
    run_local,
    schedule_at,
)
from .models import (
    Activation,
    Batch,
    Family,
    Model,
    grad,
    init_params,
    logits,
    loss,
    loss_and_grad,
    predict,
)
from .numkit import ParamVector, RngStream, fd_gradient, lin_comb, norm2
from .server_engine import (
    ClipStats,
    DecompositionReport,
    ServerOpt,
    ServerState,
    aggregate,
    check_norm_bound,
    clip_stats,
    decompose_round,
    global_update,
    scaffold_server_round,
)

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "Backbone",
    "Batch",
    "ClientShard",
    "ClipStats",
    "ConfigError",
    "Dataset",
    "DecompositionReport",
    "DiagnosticError",
    "DimensionMismatchError",
    "ExperimentConfig",
    "Family",
    "MetricsRow",
    "Model",
    "ModifierKind",
    "ObjectiveModifier",
    "ParamVector",
    "Partition",
    "RngStream",
    "RoundTrace",
    "Schedule",
    "ServerOpt",
    "ServerState",
    "Split",
    "StepKind",
    "StepRule",
    "aggregate",
    "check_norm_bound",
    "clip_coefficients",
    "clip_stats",
    "decompose_round",
    "dirichlet_partition",
    "emit_metrics_csv",
    "evaluate",
    "fd_gradient",
    "global_update",
    "grad",
    "init_params",
    "lin_comb",
    "load_csv",
    "local_step",
    "logits",
    "loss",
    "loss_and_grad",
    "make_blobs",
    "modified_gradient",
    "nar_coefficients",
    "next_batch",
    "norm2",
    "parse_config",
    "parse_config_file",
    "predict",
    "run_experiment",
    "run_local",
    "run_self_check",
    "sample_clients",
    "save_csv",
    "schedule_at",
    "scaffold_server_round",
]
