import numpy as np

from fields.grid import DisplacementField, GridSpec, Volume
from utils.errors import ValidationError


def jacobian_matrix(field: DisplacementField) -> np.ndarray:
    """(D, W, H, 3, 3) Jacobian of x -> x + phi(x); J[..., c, a] = d(x_c + phi_c)/dx_a.

    Central differences inside, first-order one-sided differences on the
    boundary slabs, both scaled by the voxel spacing.
    """
    grid = field.grid
    if any(d < 3 for d in grid.dims):
        raise ValidationError(f"jacobian needs at least 3 voxels per axis, got {grid.dims}")
    jac = np.empty(grid.dims + (3, 3), dtype=np.float64)
    for c in range(3):
        grads = np.gradient(field.vectors[..., c], *grid.spacing, edge_order=1)
        for a in range(3):
            jac[..., c, a] = grads[a]
        jac[..., c, c] += 1.0
    return jac


def jacobian_determinant(field: DisplacementField) -> Volume:
    return Volume(field.grid, np.linalg.det(jacobian_matrix(field)))


def interior_mask(grid: GridSpec) -> np.ndarray:
    """True away from the one-voxel boundary slabs"""
    mask = np.zeros(grid.dims, dtype=bool)
    mask[1:-1, 1:-1, 1:-1] = True
    return mask
