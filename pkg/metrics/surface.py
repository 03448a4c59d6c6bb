"""
Boundary-based surface distances between binary masks
"""
import math
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from utils.errors import InsufficientDataError, ValidationError

FACE_STRUCTURE = ndimage.generate_binary_structure(3, 1)


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one face neighbour outside the mask (grid edge counts as outside)"""
    mask = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=FACE_STRUCTURE, border_value=0)
    return mask & ~eroded


def nearest_rank(values: np.ndarray, percentile: float) -> float:
    """ceil(p * n)-th order statistic"""
    if not 0 < percentile <= 100:
        raise ValidationError(f"percentile must lie in (0, 100], got {percentile}")
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    if len(ordered) == 0:
        raise InsufficientDataError("no values to take a percentile of")
    rank = max(int(math.ceil(percentile / 100.0 * len(ordered))), 1)
    return float(ordered[rank - 1])


def _boundary_points(mask: np.ndarray, spacing: Sequence[float], what: str) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise InsufficientDataError(f"{what} is empty")
    return np.argwhere(boundary_voxels(mask)) * np.asarray(spacing, dtype=np.float64)


def directed_distances(mask_a: np.ndarray, mask_b: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """Distance (mm) from every boundary voxel of A to the nearest boundary voxel of B"""
    points_a = _boundary_points(mask_a, spacing, "mask A")
    points_b = _boundary_points(mask_b, spacing, "mask B")
    distances, _ = cKDTree(points_b).query(points_a)
    return distances


def hd95(mask_a: np.ndarray, mask_b: np.ndarray, spacing: Sequence[float], percentile: float = 95.0) -> float:
    """Max of the two directed nearest-rank percentiles of boundary distances"""
    if np.shape(mask_a) != np.shape(mask_b):
        raise ValidationError(f"mask shapes differ: {np.shape(mask_a)} vs {np.shape(mask_b)}")
    forward = nearest_rank(directed_distances(mask_a, mask_b, spacing), percentile)
    backward = nearest_rank(directed_distances(mask_b, mask_a, spacing), percentile)
    return max(forward, backward)


def hausdorff(mask_a: np.ndarray, mask_b: np.ndarray, spacing: Sequence[float]) -> float:
    return hd95(mask_a, mask_b, spacing, percentile=100.0)
