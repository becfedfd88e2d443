"""Deterministic simulator for confederated learning over server networks.

Edge servers connected by an undirected graph jointly minimize a
regularized logistic-regression objective over their users' data via
gradient tracking; user-to-server traffic is cut by SAGA-style variance
reduction plus an event-triggered upload rule.  The package provides
the network/problem builders (:mod:`confed.topology`,
:mod:`confed.problem`), the round-level engines (:mod:`confed.engine`),
the contraction theory and its empirical checks (:mod:`confed.theory`),
and an experiment harness with a CLI (:mod:`confed.harness`,
:mod:`confed.report`, :mod:`confed.cli`).
"""

from .engine import (
    ClusterState,
    CommLedger,
    DivergenceError,
    EngineError,
    InvariantViolation,
    RoundInfo,
    SagaTables,
    TriggerPolicy,
    cfl_saga_round,
    ctus_decide,
    gt_round,
    gt_saga_round,
    init_state,
    vr_estimate,
    vr_gradient,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    MetricsTrace,
    RunResult,
    SweepSummary,
    load_config,
    prepare,
    run,
    sweep,
)
from .problem import (
    Curvature,
    Dataset,
    DatasetConfig,
    curvature,
    full_gradient,
    minibatch_gradient,
    minibatch_loss,
    objective,
    solve_centralized,
    synthesize_dataset,
)
from .report import report, theory_report
from .theory import (
    PruneReport,
    PsiVector,
    TheoryConstants,
    compute_constants,
    ctus_prune_check,
    find_alpha_threshold,
    linear_rate_fit,
    psi_metrics,
    spectral_radius,
    transition_matrix,
)
from .topology import (
    MixingMatrix,
    ServerGraph,
    TopologyError,
    build_graph,
    laplacian,
    mixing_matrix,
    spectral_gap,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # topology
    "ServerGraph",
    "MixingMatrix",
    "TopologyError",
    "build_graph",
    "laplacian",
    "mixing_matrix",
    "spectral_gap",
    # problem
    "DatasetConfig",
    "Dataset",
    "Curvature",
    "synthesize_dataset",
    "minibatch_loss",
    "minibatch_gradient",
    "objective",
    "full_gradient",
    "solve_centralized",
    "curvature",
    # engine
    "ClusterState",
    "CommLedger",
    "SagaTables",
    "TriggerPolicy",
    "RoundInfo",
    "EngineError",
    "InvariantViolation",
    "DivergenceError",
    "init_state",
    "ctus_decide",
    "vr_estimate",
    "vr_gradient",
    "cfl_saga_round",
    "gt_saga_round",
    "gt_round",
    # theory
    "PsiVector",
    "TheoryConstants",
    "PruneReport",
    "compute_constants",
    "transition_matrix",
    "spectral_radius",
    "find_alpha_threshold",
    "psi_metrics",
    "linear_rate_fit",
    "ctus_prune_check",
    # harness / report
    "ExperimentConfig",
    "MetricsTrace",
    "RunResult",
    "SweepSummary",
    "ConfigError",
    "load_config",
    "prepare",
    "run",
    "sweep",
    "report",
    "theory_report",
]
