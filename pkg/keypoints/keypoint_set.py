from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fields.grid import GridSpec
from utils.errors import ValidationError


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """Matched keypoints x_i (world mm) with displacements d_i = y_i - x_i"""

    points: np.ndarray
    displacements: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 3)
        displacements = np.array(self.displacements, dtype=np.float64, copy=True).reshape(-1, 3)
        if len(points) != len(displacements):
            raise ValidationError(
                f"keypoint count {len(points)} does not match displacement count {len(displacements)}")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(displacements))):
            raise ValidationError("keypoints contain non-finite coordinates")
        outside = ~self.grid.contains(points) if len(points) else np.zeros(0, dtype=bool)
        if np.any(outside):
            first = int(np.flatnonzero(outside)[0])
            raise ValidationError(f"keypoint {first} at {points[first].tolist()} lies outside the grid")
        if len(np.unique(points, axis=0)) != len(points):
            raise ValidationError("keypoints must be pairwise distinct")
        points.setflags(write=False)
        displacements.setflags(write=False)
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'displacements', displacements)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def m(self) -> int:
        return len(self.points)

    @property
    def targets(self) -> np.ndarray:
        """Matched intraoperative positions y_i = x_i + d_i"""
        return self.points + self.displacements

    def subset(self, indices: Sequence[int]) -> 'KeypointSet':
        indices = np.asarray(indices, dtype=np.int64)
        return KeypointSet(self.points[indices], self.displacements[indices], self.grid)
