"""Finite-volume laboratory for the weighted p-Laplacian Neumann flow with random weights and data."""
from .bounds import ConstantSet, delta_u, estimate_constants, l1_decay_bound, linf_decay_bound, log_decay_bound, tail_bound, verify
from .grid import GridDomain, ScalarField, WeightField, average, gradient, lq_norm, make_grid, neumann_divergence, truncate
from .plap import FlowParams, apply_operator, energy
from .randomization import RandomInitModel, RandomWeightModel, run_ensemble, sample_initial, sample_weight
from .resolvent import ResolventError, resolve
from .semigroup import Trajectory, evolve

__all__ = [
    "ConstantSet", "delta_u", "estimate_constants", "l1_decay_bound", "linf_decay_bound", "log_decay_bound", "tail_bound", "verify",
    "GridDomain", "ScalarField", "WeightField", "average", "gradient", "lq_norm", "make_grid", "neumann_divergence", "truncate",
    "FlowParams", "apply_operator", "energy",
    "RandomInitModel", "RandomWeightModel", "run_ensemble", "sample_initial", "sample_weight",
    "ResolventError", "resolve", "Trajectory", "evolve",
]
