"""dsgdlab: a decentralized stochastic-gradient laboratory.

Simulates gossip-based decentralized SGD and its centralized minibatch
benchmark on synthetic topologies and objective families, and numerically
audits the convergence bounds, per-step inequalities, and transient-time
predictions that govern when the two meet.
"""

from .algorithms import (
    InitSpec,
    RunConfig,
    StepSchedule,
    WorldState,
    check_step_conditions,
    eval_schedule,
    min_ratio_constant,
    run_csgd,
    run_dsgd,
)
from .bounds import (
    BoundReport,
    TransientPrediction,
    corollary_rate,
    thm1_rhs,
    thm2_rhs,
    transient_predict,
    verify_aux_lemma,
    verify_consensus_bounds,
    verify_contraction_step,
    verify_descent,
    verify_linearization,
)
from .config import ExperimentConfig, load_config, parse_config_text
from .errors import DsgdLabError
from .harness import (
    bounds_audit,
    compare_experiment,
    run_ensemble,
    run_experiment,
    verify_config,
)
from .metrics import (
    EnsembleSummary,
    Trajectory,
    TransientEstimate,
    ensemble_summary,
    record_metrics,
    transient_time,
    weighted_grad_sum,
)
from .objectives import (
    ClassificationDataset,
    QuadraticSpec,
    SmoothnessConstants,
    estimate_constants,
    estimate_f_star,
    gen_hetero_classification,
    gen_homo_from,
    make_classification_suite,
    make_quadratic_suite,
    sigmoid_oracles,
    stochastic_gradient,
)
from .plotting import emit_plot
from .topology import (
    Graph,
    MixingMatrix,
    SpectralReport,
    build_complete,
    build_metropolis_hastings,
    build_ring,
    build_torus_2d,
    spectral_gap,
    validate_mixing,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "ClassificationDataset",
    "DsgdLabError",
    "EnsembleSummary",
    "ExperimentConfig",
    "Graph",
    "InitSpec",
    "MixingMatrix",
    "QuadraticSpec",
    "RunConfig",
    "SmoothnessConstants",
    "SpectralReport",
    "StepSchedule",
    "Trajectory",
    "TransientEstimate",
    "TransientPrediction",
    "WorldState",
    "bounds_audit",
    "build_complete",
    "build_metropolis_hastings",
    "build_ring",
    "build_torus_2d",
    "check_step_conditions",
    "compare_experiment",
    "corollary_rate",
    "emit_plot",
    "ensemble_summary",
    "estimate_constants",
    "estimate_f_star",
    "eval_schedule",
    "gen_hetero_classification",
    "gen_homo_from",
    "load_config",
    "make_classification_suite",
    "make_quadratic_suite",
    "min_ratio_constant",
    "parse_config_text",
    "record_metrics",
    "run_csgd",
    "run_dsgd",
    "run_ensemble",
    "run_experiment",
    "sigmoid_oracles",
    "spectral_gap",
    "stochastic_gradient",
    "thm1_rhs",
    "thm2_rhs",
    "transient_predict",
    "transient_time",
    "validate_mixing",
    "verify_aux_lemma",
    "verify_config",
    "verify_consensus_bounds",
    "verify_contraction_step",
    "verify_descent",
    "verify_linearization",
    "weighted_grad_sum",
]
