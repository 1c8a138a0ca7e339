"""Optimal principal-agent contracts under exogenous shutdown risk."""

from .contract import ContractSolution, Sign, k_star_expectation_form, sign_of_k, solve, value_ratio
from .mitigation import MitigationPolicy, c_inv, decide_invest, solve_mitigation
from .model import (
    ConstantIntensity,
    FirstBest,
    GridIntensity,
    Mitigation,
    ModelParams,
    MoralHazard,
    NotApplicable,
    ValidationError,
    problem_from_dict,
    validate,
)
from .simulate import SimConfig, SimReport, WagePolicy, policy_from_solution, simulate_paths

__version__ = "0.1.0"

__all__ = [
    "ConstantIntensity",
    "ContractSolution",
    "FirstBest",
    "GridIntensity",
    "Mitigation",
    "MitigationPolicy",
    "ModelParams",
    "MoralHazard",
    "NotApplicable",
    "Sign",
    "SimConfig",
    "SimReport",
    "ValidationError",
    "WagePolicy",
    "c_inv",
    "decide_invest",
    "k_star_expectation_form",
    "policy_from_solution",
    "problem_from_dict",
    "sign_of_k",
    "simulate_paths",
    "solve",
    "solve_mitigation",
    "validate",
    "value_ratio",
]
