import logging

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from fields.grid import BRAIN_CODES, SKULL, LabelVolume
from simulation.phantom import FACE_CONNECTIVITY, Phantom
from utils.errors import ValidationError

logger = logging.getLogger(__name__)


def brain_surface_mask(labels: LabelVolume) -> np.ndarray:
    """Brain (incl. CSF) voxels with a face neighbour in the skull"""
    near_skull = ndimage.binary_dilation(labels.labels == SKULL, FACE_CONNECTIVITY)
    return labels.mask(BRAIN_CODES) & near_skull


def find_craniotomy_point(phantom: Phantom) -> np.ndarray:
    """World position of the outer brain-surface voxel nearest the tumor center.

    Equal distances resolve to the smallest flat (C-order) voxel index.
    """
    surface = brain_surface_mask(phantom.labels)
    flat = np.flatnonzero(surface)
    if len(flat) == 0:
        raise ValidationError("phantom has no brain surface voxel adjacent to the skull")
    index = np.stack(np.unravel_index(flat, phantom.grid.dims), axis=1)
    world = phantom.grid.index_to_world(index)
    distance = np.linalg.norm(world - phantom.tumor_center, axis=1)
    return world[int(np.argmin(distance))]


def estimate_gravity(phantom: Phantom) -> np.ndarray:
    """Unit vector from the tumor center toward the nearest surface point"""
    target = find_craniotomy_point(phantom)
    direction = target - phantom.tumor_center
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise ValidationError("tumor center coincides with the brain surface")
    return direction / norm


def perturb_gravity(g: np.ndarray, max_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate g about the world x, y, z axes (in that order) by uniform angles in [-max_deg, max_deg]"""
    g = np.asarray(g, dtype=np.float64)
    if abs(np.linalg.norm(g) - 1.0) > 1e-9:
        raise ValidationError(f"gravity must be a unit vector, |g| = {np.linalg.norm(g)}")
    if max_deg < 0:
        raise ValidationError(f"max_deg must be >= 0, got {max_deg}")
    angles = rng.uniform(-max_deg, max_deg, size=3)
    if max_deg == 0:
        return g.copy()
    rotated = Rotation.from_euler('xyz', angles, degrees=True).apply(g)
    return rotated / np.linalg.norm(rotated)
