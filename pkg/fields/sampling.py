import logging
from typing import Union

import numpy as np
from scipy.ndimage import map_coordinates

from fields.grid import (
    BACKGROUND, RIGID_CODES, DisplacementField, GridSpec, LabelVolume, Volume, check_same_grid,
)
from utils.errors import ValidationError

logger = logging.getLogger(__name__)


def _inside(grid: GridSpec, coords: np.ndarray) -> np.ndarray:
    """coords: (3, ...) continuous voxel indices"""
    upper = np.asarray(grid.dims, dtype=np.float64).reshape((3,) + (1,) * (coords.ndim - 1)) - 1
    return np.all((coords >= 0) & (coords <= upper), axis=0)


def _trilinear(data: np.ndarray, coords: np.ndarray, inside: np.ndarray) -> np.ndarray:
    # in-range points never touch the boundary mode; outside points are zeroed afterwards
    values = map_coordinates(data, coords, order=1, mode='nearest')
    return np.where(inside, values, 0.0)


def trilinear_sample(vol: Union[Volume, DisplacementField], points) -> np.ndarray:
    """Trilinear value at world point(s); zero outside the grid.

    points: (3,) or (N, 3) world mm. Returns a scalar / (N,) for volumes and
    a 3-vector / (N, 3) for displacement fields.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 3:
        raise ValidationError(f"sample points must have 3 coordinates, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("sample points contain non-finite coordinates")

    grid = vol.grid
    coords = grid.world_to_index(pts).T
    inside = _inside(grid, coords)

    if isinstance(vol, DisplacementField):
        out = np.stack([_trilinear(vol.vectors[..., c], coords, inside) for c in range(3)], axis=-1)
    else:
        out = _trilinear(vol.data, coords, inside)
    return out[0] if single else out


def _pullback_coordinates(field: DisplacementField) -> np.ndarray:
    """Voxel-index coordinates of x + phi(x) for every voxel, shape (3, D, W, H)"""
    grid = field.grid
    index = np.indices(grid.dims, dtype=np.float64)
    spacing = np.asarray(grid.spacing).reshape(3, 1, 1, 1)
    return index + np.moveaxis(field.vectors, -1, 0) / spacing


def warp_image(img: Volume, field: DisplacementField) -> Volume:
    """Pull-back warp: out(x) = img(x + phi(x)), trilinear, zero outside"""
    check_same_grid("warp_image", img.grid, field.grid)
    coords = _pullback_coordinates(field)
    inside = _inside(img.grid, coords)
    return Volume(img.grid, _trilinear(img.data, coords, inside))


def warp_mask(mask: LabelVolume, field: DisplacementField) -> LabelVolume:
    """Nearest-neighbour pull-back of a label map; background outside the grid"""
    check_same_grid("warp_mask", mask.grid, field.grid)
    coords = _pullback_coordinates(field)
    nearest = np.rint(coords).astype(np.int64)
    upper = np.asarray(mask.grid.dims).reshape(3, 1, 1, 1) - 1
    inside = np.all((nearest >= 0) & (nearest <= upper), axis=0)
    clipped = np.clip(nearest, 0, upper)
    labels = mask.labels[clipped[0], clipped[1], clipped[2]]
    return LabelVolume(mask.grid, np.where(inside, labels, BACKGROUND))


def warp_binary(mask: np.ndarray, field: DisplacementField) -> np.ndarray:
    """Nearest-neighbour pull-back of a boolean voxel mask"""
    if mask.shape != field.grid.dims:
        raise ValidationError(f"mask shape {mask.shape} does not match field grid {field.grid.dims}")
    coords = _pullback_coordinates(field)
    nearest = np.rint(coords).astype(np.int64)
    upper = np.asarray(field.grid.dims).reshape(3, 1, 1, 1) - 1
    inside = np.all((nearest >= 0) & (nearest <= upper), axis=0)
    clipped = np.clip(nearest, 0, upper)
    return inside & mask[clipped[0], clipped[1], clipped[2]]


def mask_field(field: DisplacementField, labels: LabelVolume,
               zero_codes=RIGID_CODES) -> DisplacementField:
    """Zero the displacement wherever the label is one of zero_codes"""
    check_same_grid("mask_field", labels.grid, field.grid)
    zero_codes = tuple(zero_codes)
    if not zero_codes:
        return field
    zero = labels.mask(zero_codes)
    return DisplacementField(field.grid, np.where(zero[..., None], 0.0, field.vectors))
