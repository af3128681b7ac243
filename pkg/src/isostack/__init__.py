"""Stacking nested least-squares regressions via isotonic regression.

Nested projection families are summarized by their sufficient statistics
(:class:`~isostack.nested_models.NestedModelSequence`), stacking weights
are computed in closed form from an isotonic minimax sequence, and a
fixed-design Gaussian simulation harness estimates population risks,
risk gaps and degrees of freedom at desk scale.
"""

from .errors import DegeneracyError, ValidationError
from .isotonic import IsotonicFit, IsotonicProblem, clip_fit, minimax_oracle, pava, reduced_isotonic
from .nested_models import (
    NestedIndexSets,
    NestedModelSequence,
    OrthonormalBasis,
    combination_risk,
    empirical_inner,
    empirical_norm2,
    estimate_noise_variance,
    fit_nested,
    orthonormalize,
    predict_combination,
    sequence_model_basis,
    stepwise_deletion_order,
)
from .simulation import (
    BreimanSummary,
    DfReport,
    EstimatorSpec,
    RiskReport,
    Scenario,
    breiman_stats,
    estimate_df,
    make_scenario,
    monte_carlo,
    risk_gap_experiment,
    run_replication,
)
from .stacking import (
    EnsembleResult,
    GammaSequence,
    SelectionResult,
    StackWeights,
    adaptive_risk_correction,
    best_single,
    gamma_sequence,
    james_stein_factor,
    l0_stack_weights,
    penalized_objective,
    qagg_weights,
    randomized_ensemble,
    stack_weights,
    subset_gamma,
)

__version__ = "0.1.0"

__all__ = [
    "BreimanSummary",
    "DegeneracyError",
    "DfReport",
    "EnsembleResult",
    "EstimatorSpec",
    "GammaSequence",
    "IsotonicFit",
    "IsotonicProblem",
    "NestedIndexSets",
    "NestedModelSequence",
    "OrthonormalBasis",
    "RiskReport",
    "Scenario",
    "SelectionResult",
    "StackWeights",
    "ValidationError",
    "adaptive_risk_correction",
    "best_single",
    "breiman_stats",
    "clip_fit",
    "combination_risk",
    "empirical_inner",
    "empirical_norm2",
    "estimate_df",
    "estimate_noise_variance",
    "fit_nested",
    "gamma_sequence",
    "james_stein_factor",
    "l0_stack_weights",
    "make_scenario",
    "minimax_oracle",
    "monte_carlo",
    "orthonormalize",
    "pava",
    "penalized_objective",
    "predict_combination",
    "qagg_weights",
    "randomized_ensemble",
    "reduced_isotonic",
    "risk_gap_experiment",
    "run_replication",
    "sequence_model_basis",
    "stack_weights",
    "stepwise_deletion_order",
    "subset_gamma",
    "__version__",
]
