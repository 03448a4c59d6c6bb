from abc import ABC, abstractmethod
import logging
from typing import Iterable, Optional

from fields.grid import DisplacementField, GridSpec, LabelVolume, RIGID_CODES
from fields.sampling import mask_field
from keypoints.keypoint_set import KeypointSet
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

class BaseInterpolator(ABC):
    """Sparse keypoint displacements -> dense displacement field"""

    def __init__(self, method_name: str):
        self.method_name = method_name
        self.logger = logging.getLogger(f"{__name__}.{method_name}")

    @abstractmethod
    def fit(self, keypoints: KeypointSet) -> 'BaseInterpolator':
        """Fit the interpolant to the keypoint displacements"""
        pass

    @abstractmethod
    def evaluate(self, grid: GridSpec) -> DisplacementField:
        """Evaluate the fitted interpolant at every voxel center"""
        pass

    @abstractmethod
    def is_fitted(self) -> bool:
        pass

    def interpolate(self, keypoints: KeypointSet, labels: Optional[LabelVolume] = None,
                    zero_codes: Iterable[int] = RIGID_CODES) -> DisplacementField:
        """Fit, evaluate on the keypoints' grid and zero rigid tissue"""
        self.fit(keypoints)
        field = self.evaluate(keypoints.grid)
        if labels is not None:
            field = mask_field(field, labels, zero_codes)
        self.logger.debug(f"{self.method_name} interpolation from {keypoints.m} keypoints")
        return field

    def _require_fitted(self):
        if not self.is_fitted():
            raise ValidationError(f"{self.method_name} interpolator used before fit()")


def get_interpolator(method: str, lambda_tps: float = 0.1) -> BaseInterpolator:
    """Interpolator by CLI name: 'linear' or 'tps'"""
    from interpolators.linear import DelaunayLinearInterpolator
    from interpolators.tps import ThinPlateSplineInterpolator

    if method == 'tps':
        return ThinPlateSplineInterpolator(lambda_tps)
    if method == 'linear':
        return DelaunayLinearInterpolator()
    raise ValidationError(f"unknown interpolation method '{method}' (expected 'linear' or 'tps')")
