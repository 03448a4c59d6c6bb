import logging

import numpy as np

from fields.grid import DisplacementField, check_same_grid
from fields.jacobian import interior_mask, jacobian_determinant
from utils.errors import InsufficientDataError, ValidationError

logger = logging.getLogger(__name__)


def _squared_errors(phi_a: DisplacementField, phi_b: DisplacementField, mask: np.ndarray) -> np.ndarray:
    check_same_grid("field", phi_a.grid, phi_b.grid)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != phi_a.grid.dims:
        raise ValidationError(f"mask shape {mask.shape} does not match grid {phi_a.grid.dims}")
    if not np.any(mask):
        raise InsufficientDataError("metric mask is empty")
    diff = phi_a.vectors[mask] - phi_b.vectors[mask]
    return np.sum(diff * diff, axis=1)


def mse(phi_a: DisplacementField, phi_b: DisplacementField, mask: np.ndarray) -> float:
    """Mean squared Euclidean error over the mask, mm^2"""
    return float(np.mean(_squared_errors(phi_a, phi_b, mask)))


def max_error(phi_a: DisplacementField, phi_b: DisplacementField, mask: np.ndarray) -> float:
    """Largest Euclidean error over the mask, mm"""
    return float(np.sqrt(np.max(_squared_errors(phi_a, phi_b, mask))))


def pct_nonpositive_jacobian(field: DisplacementField, mask: np.ndarray, strict: bool = False) -> float:
    """Percentage of interior mask voxels whose Jacobian determinant is <= 0.

    strict=True counts only det < 0.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != field.grid.dims:
        raise ValidationError(f"mask shape {mask.shape} does not match grid {field.grid.dims}")
    region = mask & interior_mask(field.grid)
    n_region = int(np.count_nonzero(region))
    if n_region == 0:
        raise InsufficientDataError("mask has no interior voxels")
    det = jacobian_determinant(field).data[region]
    folded = det < 0 if strict else det <= 0
    return 100.0 * int(np.count_nonzero(folded)) / n_region
