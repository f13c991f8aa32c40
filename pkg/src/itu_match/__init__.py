"""Collective household models embedded in logit ITU matching markets."""

from .distance import DistanceResult, SolverError, distance, distance_gradient, pareto_weights, weighted_welfare_solve
from .equilibrium import Equilibrium, EquilibriumError, Market, ipfp_solve, residuals
from .estimation import Dataset, EstimateResult, HouseholdRecord, ModelFamily, estimate, estimate_mpec, estimate_nested, log_likelihood
from .model import (
    T_DEFAULT,
    DomainError,
    Preferences,
    PublicGoodPreferences,
    TransferableUtility,
    TypeSpec,
    make_pair,
    validate_properness,
)

__version__ = "0.1.0"

__all__ = [
    "T_DEFAULT", "Dataset", "DistanceResult", "DomainError", "EstimateResult", "Equilibrium", "EquilibriumError",
    "HouseholdRecord", "Market", "ModelFamily", "Preferences", "PublicGoodPreferences", "SolverError",
    "TransferableUtility", "TypeSpec", "distance", "distance_gradient", "estimate", "estimate_mpec",
    "estimate_nested", "ipfp_solve", "log_likelihood", "make_pair", "pareto_weights", "residuals",
    "validate_properness", "weighted_welfare_solve",
]
