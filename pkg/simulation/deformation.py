from dataclasses import dataclass, asdict
import logging
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from fields.grid import BRAIN_CODES, RIGID_CODES, DisplacementField
from fields.jacobian import interior_mask, jacobian_determinant
from fields.sampling import mask_field
from simulation.gravity import find_craniotomy_point
from simulation.phantom import Phantom
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

CERTIFY_TOLERANCE = 1e-3


@dataclass(frozen=True)
class SimParams:
    sag_magnitude: float = 6.0      # mm, peak gravity sag
    sag_falloff: float = 60.0       # mm, decay length from the craniotomy
    cavity_collapse: float = 0.3    # fraction of the tumor radius
    K: int = 2                      # gravity perturbations per case
    max_perturb_deg: float = 10.0
    seed: int = 0
    ramp_voxels: int = 3            # skull-interface ramp width

    def __post_init__(self):
        if self.sag_magnitude < 0:
            raise ValidationError("sag_magnitude must be >= 0")
        if self.sag_falloff <= 0:
            raise ValidationError("sag_falloff must be > 0")
        if not 0.0 <= self.cavity_collapse <= 1.0:
            raise ValidationError("cavity_collapse must lie in [0, 1]")
        if int(self.K) < 1:
            raise ValidationError("K must be a positive integer")
        if self.max_perturb_deg < 0:
            raise ValidationError("max_perturb_deg must be >= 0")
        if int(self.ramp_voxels) < 1:
            raise ValidationError("ramp_voxels must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_config(cls, simulation: Dict[str, Any], seed: int = 0) -> 'SimParams':
        return cls(
            sag_magnitude=float(simulation['sag_magnitude']),
            sag_falloff=float(simulation['sag_falloff']),
            cavity_collapse=float(simulation['cavity_collapse']),
            K=int(simulation['K']),
            max_perturb_deg=float(simulation['max_perturb_deg']),
            seed=int(seed),
            ramp_voxels=int(simulation.get('ramp_voxels', 3)),
        )


def boundary_ramp(phantom: Phantom, ramp_voxels: int = 3) -> np.ndarray:
    """0 on the brain voxels touching skull/background, rising linearly to 1 at ramp_voxels deep"""
    brain = phantom.labels.mask(BRAIN_CODES)
    depth = ndimage.distance_transform_edt(brain)
    if ramp_voxels <= 1:
        return brain.astype(np.float64)
    return np.clip((depth - 1.0) / (ramp_voxels - 1.0), 0.0, 1.0)


def sag_field(phantom: Phantom, gravity: np.ndarray, params: SimParams,
              craniotomy_point: np.ndarray) -> np.ndarray:
    centers = phantom.grid.voxel_centers()
    distance = np.linalg.norm(centers - craniotomy_point, axis=-1)
    weight = boundary_ramp(phantom, params.ramp_voxels) * np.exp(-distance / params.sag_falloff)
    return (params.sag_magnitude * weight)[..., None] * gravity


def collapse_field(phantom: Phantom, cavity_collapse: float) -> np.ndarray:
    """Radial contraction toward the tumor center.

    Magnitude cavity_collapse * r_t at the tumor boundary, cosine taper to 0
    across the edema shell; the core itself contracts uniformly.
    """
    offset = phantom.grid.voxel_centers() - phantom.tumor_center
    r = np.linalg.norm(offset, axis=-1)
    r_t = phantom.tumor_radius
    edema = phantom.edema_thickness
    taper = 0.5 * (1.0 + np.cos(np.pi * np.clip((r - r_t) / edema, 0.0, 1.0)))
    safe_r = np.where(r > 0, r, 1.0)
    shell = (r > r_t) & (r <= r_t + edema)
    out = np.zeros(offset.shape)
    out[shell] = (-cavity_collapse * r_t * taper[shell] / safe_r[shell])[:, None] * offset[shell]
    core = r <= r_t
    out[core] = -cavity_collapse * offset[core]
    return out


def certify_field(field: DisplacementField, region: np.ndarray,
                  tolerance: float = CERTIFY_TOLERANCE) -> Tuple[DisplacementField, float]:
    """Largest gamma in (0, 1] (bisection) with det J(gamma * phi) > 0 on region"""
    def feasible(gamma: float) -> bool:
        det = jacobian_determinant(field.scaled(gamma)).data
        return bool(np.all(det[region] > 0))

    if not np.any(region) or feasible(1.0):
        return field, 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    logger.info(f"Ground-truth field scaled by gamma={lo:.4f} to remove folding")
    return field.scaled(lo), lo


def simulate_deformation(phantom: Phantom, gravity: np.ndarray, params: SimParams,
                         craniotomy_point: Optional[np.ndarray] = None) -> DisplacementField:
    """Analytic gravity sag + cavity collapse, masked to zero on rigid tissue and certified fold-free"""
    gravity = np.asarray(gravity, dtype=np.float64)
    if abs(np.linalg.norm(gravity) - 1.0) > 1e-9:
        raise ValidationError(f"gravity must be a unit vector, |g| = {np.linalg.norm(gravity)}")
    if craniotomy_point is None:
        craniotomy_point = find_craniotomy_point(phantom)

    vectors = sag_field(phantom, gravity, params, np.asarray(craniotomy_point, dtype=np.float64))
    if params.cavity_collapse > 0:
        vectors = vectors + collapse_field(phantom, params.cavity_collapse)
    field = mask_field(DisplacementField(phantom.grid, vectors), phantom.labels, RIGID_CODES)

    region = phantom.labels.mask(BRAIN_CODES) & interior_mask(phantom.grid)
    certified, _ = certify_field(field, region)
    return certified
