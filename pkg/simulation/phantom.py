from dataclasses import dataclass
import logging
from typing import Optional

import numpy as np
from scipy import ndimage

from fields.grid import (
    BACKGROUND, CSF, EDEMA, PARENCHYMA, SKULL, TUMOR, GridSpec, LabelVolume, Volume,
)
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

MIN_DIM = 32

TISSUE_INTENSITY = {
    BACKGROUND: 0.0,
    SKULL: 0.15,
    CSF: 0.25,
    PARENCHYMA: 0.7,
    EDEMA: 0.5,
    TUMOR: 0.9,
}

PHANTOM_CONFIG = {
    'semi_axis_fraction': (0.55, 0.70),   # of the half extent per axis
    'shell_voxels': (1, 2),               # CSF rim and skull thickness
    'tumor_radius_fraction': (0.12, 0.18),  # of the smallest semi-axis
    'edema_fraction': (0.5, 0.8),         # edema thickness / tumor radius
    'tumor_margin_voxels': 2.0,
    'modulation_amplitude': 0.05,
    'texture_amplitude': 0.12,
    'texture_sigma_voxels': 1.5,
    'noise_sigma': 0.01,
}

# 6-connected structuring element
FACE_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True, eq=False)
class Phantom:
    """Synthetic preoperative case: image, tissue labels and tumor geometry (world mm)"""

    image: Volume
    labels: LabelVolume
    tumor_center: np.ndarray
    tumor_radius: float
    edema_thickness: float
    seed: Optional[int] = None

    def __post_init__(self):
        center = np.array(self.tumor_center, dtype=np.float64).reshape(3)
        center.setflags(write=False)
        object.__setattr__(self, 'tumor_center', center)
        if self.image.grid != self.labels.grid:
            raise ValidationError("phantom image and labels must share a grid")

    @property
    def grid(self) -> GridSpec:
        return self.image.grid


def _smooth_noise(rng: np.random.Generator, dims, sigma) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.standard_normal(dims), sigma=sigma, mode='reflect')
    std = field.std()
    return field / std if std > 0 else field


def _tumor_center(rng: np.random.Generator, grid: GridSpec, brain: np.ndarray,
                  center: np.ndarray, clearance: float) -> np.ndarray:
    """Random off-center point whose clearance-ball stays inside the brain"""
    depth = ndimage.distance_transform_edt(brain, sampling=grid.spacing)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    step = 0.25 * min(grid.spacing)
    reach = 0.0
    t = 0.0
    while True:
        sample_at = grid.world_to_index(center + t * direction)
        nearest = np.rint(sample_at).astype(int)
        if np.any(nearest < 0) or np.any(nearest >= np.asarray(grid.dims)):
            break
        if depth[tuple(nearest)] < clearance:
            break
        reach = t
        t += step
    if reach == 0.0 and depth[tuple(np.rint(grid.world_to_index(center)).astype(int))] < clearance:
        raise ValidationError("grid too small to place the tumor inside the brain")
    return center + rng.uniform(0.3, 0.8) * reach * direction


def make_phantom(grid: GridSpec, seed: int, config: Optional[dict] = None) -> Phantom:
    """Ellipsoidal brain with CSF rim, skull shell and an off-center tumor/edema sphere"""
    cfg = dict(PHANTOM_CONFIG, **(config or {}))
    if any(d < MIN_DIM for d in grid.dims):
        raise ValidationError(f"phantom grid needs at least {MIN_DIM} voxels per axis, got {grid.dims}")
    rng = np.random.default_rng(seed)
    spacing = np.asarray(grid.spacing)
    centers = grid.voxel_centers()
    center = np.asarray(grid.origin) + grid.extent / 2.0

    half_extent = grid.extent / 2.0
    semi_axes = rng.uniform(*cfg['semi_axis_fraction'], size=3) * half_extent
    rel = (centers - center) / semi_axes
    brain = np.einsum('...i,...i->...', rel, rel) <= 1.0

    lo, hi = cfg['shell_voxels']
    csf_voxels = int(rng.integers(lo, hi + 1))
    skull_voxels = int(rng.integers(lo, hi + 1))
    csf = ndimage.binary_dilation(brain, FACE_CONNECTIVITY, iterations=csf_voxels) & ~brain
    inner = brain | csf
    skull = ndimage.binary_dilation(inner, FACE_CONNECTIVITY, iterations=skull_voxels) & ~inner
    border = np.ones(grid.dims, dtype=bool)
    border[1:-1, 1:-1, 1:-1] = False
    if np.any(skull & border):
        raise ValidationError("grid too small to fit the CSF and skull shells")

    tumor_radius = max(rng.uniform(*cfg['tumor_radius_fraction']) * semi_axes.min(),
                       1.5 * spacing.max())
    # at least one voxel so the edema shell is never empty
    edema_thickness = max(rng.uniform(*cfg['edema_fraction']) * tumor_radius, spacing.max())
    clearance = tumor_radius + edema_thickness + cfg['tumor_margin_voxels'] * spacing.max()
    tumor_center = _tumor_center(rng, grid, brain, center, clearance)

    radius = np.linalg.norm(centers - tumor_center, axis=-1)
    labels = np.full(grid.dims, BACKGROUND, dtype=np.uint8)
    labels[skull] = SKULL
    labels[csf] = CSF
    labels[brain] = PARENCHYMA
    labels[brain & (radius <= tumor_radius + edema_thickness)] = EDEMA
    labels[brain & (radius <= tumor_radius)] = TUMOR

    image = np.zeros(grid.dims)
    for code, value in TISSUE_INTENSITY.items():
        image[labels == code] = value
    foreground = labels != BACKGROUND
    modulation = _smooth_noise(rng, grid.dims, sigma=np.asarray(grid.dims) / 8.0)
    texture = _smooth_noise(rng, grid.dims, sigma=cfg['texture_sigma_voxels'])
    image = image * (1.0 + cfg['modulation_amplitude'] * modulation)
    image += np.where(labels == PARENCHYMA, cfg['texture_amplitude'] * texture, 0.0)
    image += cfg['noise_sigma'] * rng.standard_normal(grid.dims)
    image = np.where(foreground, image, 0.0)

    logger.debug(f"Phantom seed={seed}: semi-axes {np.round(semi_axes, 2).tolist()} mm, "
                 f"tumor r={tumor_radius:.2f} mm, edema {edema_thickness:.2f} mm")
    return Phantom(
        image=Volume(grid, image),
        labels=LabelVolume(grid, labels),
        tumor_center=tumor_center,
        tumor_radius=float(tumor_radius),
        edema_thickness=float(edema_thickness),
        seed=seed,
    )
