"""Lending dynamics: group models, the SCM, threshold policies and experiments."""

from .experiments import (
    RESULT_COLUMNS,
    ROBUSTNESS_COLUMNS,
    BureauExperiment,
    BureauIntervention,
    MarginalVariants,
    bureau_experiment,
    count_clamped,
    credit_bureau_intervention,
    evaluate_lending_policy,
    government_intervention,
    lending_samples,
    marginal_outcome_variant,
    result_row,
    robustness_sweep,
    threshold_sweep,
    write_rows,
)
from .groups import BetaScoreGroup, GroupModel, ScoreGroup, TabulatedScoreGroup, default_groups, load_tabulated_groups
from .model import LendingParams, build_lending_scm, delta_query, profit_query
from .thresholds import CRITERIA, ThresholdPolicy, compute_thresholds

__all__ = [
    "BetaScoreGroup", "BureauExperiment", "BureauIntervention", "CRITERIA", "GroupModel", "LendingParams",
    "MarginalVariants", "RESULT_COLUMNS", "ROBUSTNESS_COLUMNS", "ScoreGroup", "TabulatedScoreGroup", "ThresholdPolicy",
    "build_lending_scm", "bureau_experiment", "compute_thresholds", "count_clamped", "credit_bureau_intervention",
    "default_groups", "delta_query", "evaluate_lending_policy", "government_intervention", "lending_samples",
    "load_tabulated_groups", "marginal_outcome_variant", "profit_query", "result_row", "robustness_sweep",
    "threshold_sweep", "write_rows",
]
