"""
Difference-of-Gaussians keypoint detector (the detection stage of 3D SIFT).

Scale levels sigma_k = sigma0 * 2**(k / intervals) are all computed at full
resolution, so detections move exactly with the image on the voxel lattice.
"""
from dataclasses import dataclass
import logging
from typing import Optional

import numpy as np
from scipy import ndimage

from fields.grid import Volume
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

DETECTOR_CONFIG = {
    'n_octaves': 3,
    'intervals': 3,
    'sigma0': 1.6,
    'truncate': 3.0,
    'contrast_fraction': 0.02,
}


@dataclass(frozen=True, eq=False)
class Detections:
    voxels: np.ndarray     # (N, 3) integer indices
    points: np.ndarray     # (N, 3) world mm
    response: np.ndarray   # (N,) |DoG|
    level: np.ndarray      # (N,) DoG level of the extremum


def scale_sigmas(n_octaves: int = 3, intervals: int = 3, sigma0: float = 1.6) -> np.ndarray:
    levels = n_octaves * intervals + 3
    return sigma0 * 2.0 ** (np.arange(levels) / intervals)


def difference_of_gaussians(data: np.ndarray, sigmas: np.ndarray, truncate: float = 3.0) -> np.ndarray:
    """(L - 1, D, W, H) stack of adjacent-level differences"""
    blurred = np.stack([ndimage.gaussian_filter(data, sigma=s, mode='nearest', truncate=truncate)
                        for s in sigmas])
    return blurred[1:] - blurred[:-1]


def scale_space_extrema(dog: np.ndarray) -> np.ndarray:
    """Boolean mask of strict maxima/minima over the 3x3x3x3 neighbourhood.

    First/last DoG levels and the one-voxel spatial border never qualify.
    """
    footprint = np.ones((3, 3, 3, 3), dtype=bool)
    footprint[1, 1, 1, 1] = False
    neighbour_max = ndimage.maximum_filter(dog, footprint=footprint, mode='nearest')
    neighbour_min = ndimage.minimum_filter(dog, footprint=footprint, mode='nearest')
    extrema = (dog > neighbour_max) | (dog < neighbour_min)
    valid = np.zeros(dog.shape, dtype=bool)
    valid[1:-1, 1:-1, 1:-1, 1:-1] = True
    return extrema & valid


def find_extrema(img: Volume, brain_mask: np.ndarray, contrast_threshold: Optional[float] = None,
                 config: Optional[dict] = None) -> Detections:
    cfg = dict(DETECTOR_CONFIG, **(config or {}))
    brain_mask = np.asarray(brain_mask, dtype=bool)
    if brain_mask.shape != img.grid.dims:
        raise ValidationError(f"brain mask shape {brain_mask.shape} does not match image {img.grid.dims}")
    if not np.any(brain_mask):
        raise ValidationError("brain mask is empty")
    if contrast_threshold is None:
        contrast_threshold = cfg['contrast_fraction'] * img.intensity_range

    empty = Detections(np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int64))
    if img.intensity_range == 0:
        return empty

    sigmas = scale_sigmas(cfg['n_octaves'], cfg['intervals'], cfg['sigma0'])
    dog = difference_of_gaussians(img.data, sigmas, cfg['truncate'])
    keep = scale_space_extrema(dog) & brain_mask[None] & (np.abs(dog) >= contrast_threshold)
    level, i, j, k = np.nonzero(keep)
    if len(level) == 0:
        return empty

    response = np.abs(dog[level, i, j, k])
    flat = np.ravel_multi_index((i, j, k), img.grid.dims)
    # |DoG| descending, ties by voxel index
    order = np.lexsort((flat, -response))
    level, flat, response = level[order], flat[order], response[order]
    _, first = np.unique(flat, return_index=True)
    first = np.sort(first)
    level, flat, response = level[first], flat[first], response[first]

    voxels = np.stack(np.unravel_index(flat, img.grid.dims), axis=1)
    return Detections(voxels, img.grid.index_to_world(voxels), response, level)


def detect_keypoints(img: Volume, brain_mask: np.ndarray, contrast_threshold: Optional[float] = None,
                     config: Optional[dict] = None) -> np.ndarray:
    """World positions of DoG extrema inside brain_mask, strongest first"""
    detections = find_extrema(img, brain_mask, contrast_threshold, config)
    logger.debug(f"Detected {len(detections.points)} keypoint candidates")
    return detections.points
