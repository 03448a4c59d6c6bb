from dataclasses import dataclass, field
from typing import Dict, Iterable, Tuple, Any

import numpy as np

from utils.errors import ValidationError, GridMismatchError

# Tissue code book shared by every label map
BACKGROUND = 0
SKULL = 1
CSF = 2
PARENCHYMA = 3
EDEMA = 4
TUMOR = 5

LABEL_NAMES = {
    BACKGROUND: 'background',
    SKULL: 'skull',
    CSF: 'csf',
    PARENCHYMA: 'parenchyma',
    EDEMA: 'edema',
    TUMOR: 'tumor',
}

BRAIN_CODES = (CSF, PARENCHYMA, EDEMA, TUMOR)
HEALTHY_CODES = (CSF, PARENCHYMA, EDEMA)
RIGID_CODES = (BACKGROUND, SKULL)


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GridSpec:
    """Voxel lattice: dims (D, W, H), spacing in mm/voxel, origin = world mm of voxel (0, 0, 0)"""

    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
            raise ValidationError("GridSpec needs three dims, spacings and origin components")
        if any(d < 2 for d in dims):
            raise ValidationError(f"GridSpec dims must all be >= 2, got {dims}")
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise ValidationError(f"GridSpec spacing must be positive, got {spacing}")
        if any(not np.isfinite(o) for o in origin):
            raise ValidationError(f"GridSpec origin must be finite, got {origin}")
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'spacing', spacing)
        object.__setattr__(self, 'origin', origin)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.dims

    @property
    def extent(self) -> np.ndarray:
        """World length covered by voxel centers along each axis"""
        return (np.asarray(self.dims) - 1) * np.asarray(self.spacing)

    def index_to_world(self, index: np.ndarray) -> np.ndarray:
        index = np.asarray(index, dtype=np.float64)
        return np.asarray(self.origin) + index * np.asarray(self.spacing)

    def world_to_index(self, points: np.ndarray) -> np.ndarray:
        """Continuous voxel coordinates of world points"""
        points = np.asarray(points, dtype=np.float64)
        return (points - np.asarray(self.origin)) / np.asarray(self.spacing)

    def voxel_centers(self) -> np.ndarray:
        """(D, W, H, 3) world coordinates of every voxel center"""
        axes = [self.origin[a] + np.arange(self.dims[a]) * self.spacing[a] for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """True where a world point lies in the box spanned by the voxel centers"""
        idx = self.world_to_index(points)
        upper = np.asarray(self.dims) - 1
        return np.all((idx >= 0) & (idx <= upper), axis=-1)

    def padding_to_multiple(self, multiple: int) -> Tuple[int, int, int]:
        """Voxels to append on the high side of each axis to reach a multiple"""
        return tuple((-d) % int(multiple) for d in self.dims)

    def padded(self, pad: Iterable[int]) -> 'GridSpec':
        pad = tuple(int(p) for p in pad)
        return GridSpec(tuple(d + p for d, p in zip(self.dims, pad)), self.spacing, self.origin)

    def to_dict(self) -> Dict[str, Any]:
        return {'dims': list(self.dims), 'spacing': list(self.spacing), 'origin': list(self.origin)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'GridSpec':
        try:
            return cls(data['dims'], data['spacing'], data.get('origin', (0.0, 0.0, 0.0)))
        except (KeyError, TypeError) as e:
            raise ValidationError(f"invalid grid description: {data!r}") from e


def check_same_grid(what: str, expected: GridSpec, actual: GridSpec) -> None:
    if expected != actual:
        raise GridMismatchError(what, expected, actual)


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar image on a grid (64-bit, read-only)"""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.shape != self.grid.dims:
            raise ValidationError(f"Volume data shape {data.shape} does not match grid dims {self.grid.dims}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("Volume data contains non-finite values")
        object.__setattr__(self, 'data', _readonly(data))

    @property
    def intensity_range(self) -> float:
        return float(self.data.max() - self.data.min())


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Tissue label map using the fixed code book"""

    grid: GridSpec
    labels: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.shape != self.grid.dims:
            raise ValidationError(f"label shape {raw.shape} does not match grid dims {self.grid.dims}")
        if raw.dtype.kind == 'f':
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise ValidationError("labels must be integer codes")
        bad = ~np.isin(raw, list(LABEL_NAMES))
        if np.any(bad):
            first = np.unravel_index(int(np.flatnonzero(bad)[0]), raw.shape)
            raise ValidationError(f"label {raw[first]} at voxel {tuple(int(i) for i in first)} is not in the code book")
        object.__setattr__(self, 'labels', _readonly(raw.astype(np.uint8, copy=True)))

    def mask(self, codes: Iterable[int]) -> np.ndarray:
        return np.isin(self.labels, list(codes))

    def brain_mask(self) -> np.ndarray:
        return self.mask(BRAIN_CODES)

    def healthy_mask(self) -> np.ndarray:
        """Brain minus tumor core"""
        return self.mask(HEALTHY_CODES)

    def counts(self) -> Dict[str, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {LABEL_NAMES[int(v)]: int(c) for v, c in zip(values, counts)}


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """World-axis displacement in mm per voxel, stored as (D, W, H, 3)"""

    grid: GridSpec
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64, copy=True)
        if vectors.shape != self.grid.dims + (3,):
            raise ValidationError(
                f"field shape {vectors.shape} does not match grid dims {self.grid.dims} + (3,)")
        if not np.all(np.isfinite(vectors)):
            raise ValidationError("displacement field contains non-finite values")
        object.__setattr__(self, 'vectors', _readonly(vectors))

    @classmethod
    def zeros(cls, grid: GridSpec) -> 'DisplacementField':
        return cls(grid, np.zeros(grid.dims + (3,)))

    @classmethod
    def from_function(cls, grid: GridSpec, func) -> 'DisplacementField':
        """Evaluate func on the (D, W, H, 3) voxel-center coordinates"""
        return cls(grid, func(grid.voxel_centers()))

    def scaled(self, factor: float) -> 'DisplacementField':
        return DisplacementField(self.grid, self.vectors * float(factor))

    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=-1)
