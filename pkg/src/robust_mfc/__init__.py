"""Robust mean-field control on finite spaces.

Solve the robust dynamic programme on a discretized simplex of population
laws, extract optimal policies and worst-case common-noise selectors, and
check the mean-field approximation against finite N-agent simulations.
"""
from .measures import (
    DimensionError,
    Dist,
    FiniteSpace,
    SimplexGrid,
    ValidationError,
    build_simplex_grid,
    project_to_grid,
    w1_finite,
    w1_product,
)
from .model import ModelSpec, audit_assumptions, load_model, make_perturbed_uncertainty_set, validate_model
from .lifted import JointDist, StatePolicy, disintegrate, kernel_to_joint, lifted_kernel, lifted_reward, lifted_transition

__all__ = [
    "DimensionError", "Dist", "FiniteSpace", "SimplexGrid", "ValidationError",
    "build_simplex_grid", "project_to_grid", "w1_finite", "w1_product",
    "ModelSpec", "audit_assumptions", "load_model", "make_perturbed_uncertainty_set", "validate_model",
    "JointDist", "StatePolicy", "disintegrate", "kernel_to_joint", "lifted_kernel", "lifted_reward",
    "lifted_transition",
]
