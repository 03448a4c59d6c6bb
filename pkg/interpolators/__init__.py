"""
Sparse-to-dense displacement interpolators
"""

from .base_interpolator import BaseInterpolator, get_interpolator
from .tps import TpsModel, ThinPlateSplineInterpolator, tps_fit, tps_evaluate, tps_kernel
from .delaunay import Tetrahedralization, delaunay_build
from .linear import DelaunayLinearInterpolator, linear_interpolate, linear_sample

__all__ = [
    'BaseInterpolator',
    'get_interpolator',
    'TpsModel',
    'ThinPlateSplineInterpolator',
    'tps_fit',
    'tps_evaluate',
    'tps_kernel',
    'Tetrahedralization',
    'delaunay_build',
    'DelaunayLinearInterpolator',
    'linear_interpolate',
    'linear_sample',
]
