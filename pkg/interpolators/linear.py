import logging

import numpy as np

from fields.grid import DisplacementField, GridSpec
from interpolators.base_interpolator import BaseInterpolator
from interpolators.delaunay import Tetrahedralization, delaunay_build
from keypoints.keypoint_set import KeypointSet
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

BARY_TOL = 1e-12


def _vertex_values(tets: Tetrahedralization, displacements: np.ndarray) -> np.ndarray:
    values = np.asarray(displacements, dtype=np.float64).reshape(-1, 3)
    if len(values) == tets.n_input:
        return values[tets.source_index]
    if len(values) == len(tets.points):
        return values
    raise ValidationError(
        f"displacement count {len(values)} does not match point count {tets.n_input}")


def linear_interpolate(tets: Tetrahedralization, displacements: np.ndarray,
                       grid: GridSpec) -> DisplacementField:
    """Barycentric blend inside the hull, zero vector outside.

    Each tet's voxel bounding box is rasterised and tested with its
    barycentric coordinates.
    """
    values = _vertex_values(tets, displacements)
    out = np.zeros(grid.dims + (3,))
    if len(tets.tets) == 0:
        return DisplacementField(grid, out)

    inv = tets.inverse_transforms()
    spacing = np.asarray(grid.spacing)
    origin = np.asarray(grid.origin)
    upper = np.asarray(grid.dims) - 1

    for t, tet in enumerate(tets.tets):
        verts = tets.points[tet]
        lo_idx = np.ceil((verts.min(axis=0) - origin) / spacing - 1e-9).astype(np.int64)
        hi_idx = np.floor((verts.max(axis=0) - origin) / spacing + 1e-9).astype(np.int64)
        lo_idx = np.maximum(lo_idx, 0)
        hi_idx = np.minimum(hi_idx, upper)
        if np.any(hi_idx < lo_idx):
            continue
        axes = [np.arange(lo_idx[a], hi_idx[a] + 1) for a in range(3)]
        ii, jj, kk = np.meshgrid(*axes, indexing='ij')
        idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
        world = origin + idx * spacing
        lam = (world - verts[0]) @ inv[t].T
        bary = np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)
        inside = np.all(bary >= -BARY_TOL, axis=1)
        if not np.any(inside):
            continue
        sel = idx[inside]
        out[sel[:, 0], sel[:, 1], sel[:, 2]] = bary[inside] @ values[tet]

    return DisplacementField(grid, out)


def linear_sample(tets: Tetrahedralization, displacements: np.ndarray, point,
                  start: int = 0) -> np.ndarray:
    """Single-point query by adjacency walk"""
    values = _vertex_values(tets, displacements)
    t, bary = tets.locate(point, start=start)
    if t < 0:
        return np.zeros(3)
    return bary @ values[tets.tets[t]]


class DelaunayLinearInterpolator(BaseInterpolator):
    def __init__(self):
        super().__init__("linear")
        self.tetrahedralization = None
        self.displacements = None

    def fit(self, keypoints: KeypointSet) -> 'DelaunayLinearInterpolator':
        self.tetrahedralization = delaunay_build(keypoints.points)
        self.displacements = keypoints.displacements
        return self

    def evaluate(self, grid: GridSpec) -> DisplacementField:
        self._require_fitted()
        return linear_interpolate(self.tetrahedralization, self.displacements, grid)

    def is_fitted(self) -> bool:
        return self.tetrahedralization is not None
