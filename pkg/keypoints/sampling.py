from dataclasses import dataclass
import logging

import numpy as np

from fields.grid import DisplacementField
from fields.sampling import trilinear_sample
from keypoints.keypoint_set import KeypointSet
from utils.errors import InsufficientDataError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class KeypointSample:
    points: np.ndarray
    indices: np.ndarray
    exhausted: bool  # M >= number of candidates: every candidate returned

    def __len__(self) -> int:
        return len(self.points)


def sample_keypoints(candidates: np.ndarray, m: int, rng: np.random.Generator) -> KeypointSample:
    """Uniform sample of m candidates without replacement"""
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    if m < 1:
        raise ValidationError(f"M must be >= 1, got {m}")
    n = len(candidates)
    if n == 0:
        raise InsufficientDataError("no keypoint candidates to sample from")
    if m >= n:
        if m > n:
            logger.warning(f"Requested {m} keypoints but only {n} candidates exist; using all")
        indices = np.arange(n)
        return KeypointSample(candidates.copy(), indices, True)
    indices = rng.choice(n, size=m, replace=False)
    return KeypointSample(candidates[indices], indices, False)


def attach_ground_truth(points: np.ndarray, phi_gt: DisplacementField) -> KeypointSet:
    """d_i = trilinear phi_gt(x_i)"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    outside = ~phi_gt.grid.contains(points)
    if np.any(outside):
        first = int(np.flatnonzero(outside)[0])
        raise ValidationError(f"keypoint {first} at {points[first].tolist()} lies outside the field grid")
    displacements = trilinear_sample(phi_gt, points) if len(points) else np.zeros((0, 3))
    return KeypointSet(points, displacements, phi_gt.grid)


def draw_keypoints(candidates: np.ndarray, phi_gt: DisplacementField, m: int,
                   rng: np.random.Generator) -> KeypointSet:
    """Sample m candidates and pair them with ground-truth displacements"""
    sample = sample_keypoints(candidates, m, rng)
    return attach_ground_truth(sample.points, phi_gt)
