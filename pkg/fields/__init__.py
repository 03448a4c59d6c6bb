"""
Grids, volumes, displacement fields, sampling, warping and Jacobians
"""

from .grid import (
    GridSpec, Volume, LabelVolume, DisplacementField, check_same_grid,
    BACKGROUND, SKULL, CSF, PARENCHYMA, EDEMA, TUMOR,
    LABEL_NAMES, BRAIN_CODES, HEALTHY_CODES, RIGID_CODES,
)
from .sampling import trilinear_sample, warp_image, warp_mask, warp_binary, mask_field
from .jacobian import jacobian_matrix, jacobian_determinant, interior_mask

__all__ = [
    'GridSpec',
    'Volume',
    'LabelVolume',
    'DisplacementField',
    'check_same_grid',
    'BACKGROUND', 'SKULL', 'CSF', 'PARENCHYMA', 'EDEMA', 'TUMOR',
    'LABEL_NAMES', 'BRAIN_CODES', 'HEALTHY_CODES', 'RIGID_CODES',
    'trilinear_sample',
    'warp_image',
    'warp_mask',
    'warp_binary',
    'mask_field',
    'jacobian_matrix',
    'jacobian_determinant',
    'interior_mask',
]
