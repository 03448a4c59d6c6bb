"""
Synthetic phantoms and analytic brain-shift ground truth
"""

from .phantom import Phantom, make_phantom
from .gravity import brain_surface_mask, find_craniotomy_point, estimate_gravity, perturb_gravity
from .deformation import SimParams, simulate_deformation, certify_field
from .dataset import (
    CaseData, generate_dataset, generate_phantoms, simulate_dataset, load_case, load_phantom,
    split_counts, assign_splits,
)

__all__ = [
    'Phantom',
    'make_phantom',
    'brain_surface_mask',
    'find_craniotomy_point',
    'estimate_gravity',
    'perturb_gravity',
    'SimParams',
    'simulate_deformation',
    'certify_field',
    'generate_dataset',
    'split_counts',
    'assign_splits',
    'CaseData',
    'load_case',
    'generate_phantoms',
    'simulate_dataset',
    'load_phantom',
]
