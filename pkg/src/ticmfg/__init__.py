"""Solvers and N-agent verifiers for time-inconsistent mean-field games."""

from .model import (
    ActionGrid,
    DiscountSpec,
    Exponential,
    ModelSpec,
    TableDiscount,
    WeightedAtoms,
    get_model,
    horizon_for_tail,
    load_tabulated_model,
    quadratic_model,
    tail_bound,
    tracking_model,
)
from .measures import (
    RelaxedAction,
    argmax_with_ties,
    dirac,
    integrate_reward,
    integrate_transition,
    wasserstein1,
)
from .mfg_dynamics import (
    AtomValueTable,
    FeedbackPolicy,
    NuGrid,
    PopulationFlow,
    TimePolicy,
    evaluate_feedback,
    load_policy,
    propagate_flow_feedback,
    propagate_flow_time,
    save_policy,
    solve_atom_values,
)
from .classic_eq import (
    ClassicEquilibriumResult,
    ClassicVerificationReport,
    best_response,
    solve_classic,
    verify_classic,
)
from .consistent_eq import (
    ConsistentEquilibriumResult,
    ConsistentVerificationReport,
    feedback_best_response,
    induced_time_policy,
    solve_consistent,
    verify_consistent,
)
from .nagent import (
    GapReport,
    LatticePoint,
    PrecommitReport,
    TrajectoryStats,
    conditional_deviation_gap,
    consistent_gap,
    continuation_discrepancy,
    flow_discrepancy,
    lattice_round,
    mc_simulate,
    precommit_gap,
    value_discrepancy,
)

__version__ = "0.1.0"

__all__ = [
    "ActionGrid",
    "AtomValueTable",
    "ClassicEquilibriumResult",
    "ClassicVerificationReport",
    "ConsistentEquilibriumResult",
    "ConsistentVerificationReport",
    "DiscountSpec",
    "Exponential",
    "FeedbackPolicy",
    "GapReport",
    "LatticePoint",
    "ModelSpec",
    "NuGrid",
    "PopulationFlow",
    "PrecommitReport",
    "RelaxedAction",
    "TableDiscount",
    "TimePolicy",
    "TrajectoryStats",
    "WeightedAtoms",
    "argmax_with_ties",
    "best_response",
    "conditional_deviation_gap",
    "consistent_gap",
    "continuation_discrepancy",
    "dirac",
    "evaluate_feedback",
    "feedback_best_response",
    "flow_discrepancy",
    "get_model",
    "horizon_for_tail",
    "induced_time_policy",
    "integrate_reward",
    "integrate_transition",
    "lattice_round",
    "load_policy",
    "load_tabulated_model",
    "mc_simulate",
    "precommit_gap",
    "propagate_flow_feedback",
    "propagate_flow_time",
    "quadratic_model",
    "save_policy",
    "solve_atom_values",
    "solve_classic",
    "solve_consistent",
    "tail_bound",
    "tracking_model",
    "value_discrepancy",
    "verify_classic",
    "verify_consistent",
    "wasserstein1",
]
