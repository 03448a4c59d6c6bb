from dataclasses import dataclass
import logging

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from fields.grid import DisplacementField, GridSpec
from interpolators.base_interpolator import BaseInterpolator
from keypoints.keypoint_set import KeypointSet
from utils.errors import DegenerateConfigurationError, ValidationError

logger = logging.getLogger(__name__)

# voxel centers evaluated per cdist call
EVAL_CHUNK = 65536


def tps_kernel(r: np.ndarray) -> np.ndarray:
    """3D biharmonic kernel U(r) = -r"""
    return -r


@dataclass(frozen=True, eq=False)
class TpsModel:
    control_points: np.ndarray  # (M, 3)
    weights: np.ndarray         # (M, 3) kernel coefficients per output component
    affine: np.ndarray          # (4, 3) rows: constant, x0, x1, x2
    lambda_tps: float

    def evaluate_points(self, points: np.ndarray) -> np.ndarray:
        """phi(x) = sum_i w_i U(|x - x_i|) + a^T (1, x) for (N, 3) world points"""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty((len(points), 3))
        for start in range(0, len(points), EVAL_CHUNK):
            chunk = points[start:start + EVAL_CHUNK]
            kernel = tps_kernel(cdist(chunk, self.control_points))
            out[start:start + EVAL_CHUNK] = kernel @ self.weights + self.affine[0] + chunk @ self.affine[1:]
        return out

    def side_condition_residual(self) -> float:
        """max |P^T w|, zero for a valid fit"""
        P = np.hstack([np.ones((len(self.control_points), 1)), self.control_points])
        return float(np.abs(P.T @ self.weights).max())


def _check_configuration(points: np.ndarray) -> None:
    m = len(points)
    if m < 4:
        raise DegenerateConfigurationError("fewer than 4 control points", f"M={m}")
    if len(np.unique(points, axis=0)) != m:
        raise DegenerateConfigurationError("duplicate control points")
    centered = points - points.mean(axis=0)
    singular = linalg.svdvals(centered)
    if singular[-1] <= 1e-10 * max(singular[0], 1e-300):
        kind = "collinear" if singular[1] <= 1e-10 * singular[0] else "coplanar"
        raise DegenerateConfigurationError(f"{kind} control points", "affine term is rank-deficient")


def fit_tps_arrays(points: np.ndarray, values: np.ndarray, lambda_tps: float) -> TpsModel:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    values = np.asarray(values, dtype=np.float64).reshape(len(points), -1)
    if lambda_tps < 0 or not np.isfinite(lambda_tps):
        raise ValidationError(f"lambda_tps must be a finite value >= 0, got {lambda_tps}")
    _check_configuration(points)

    m = len(points)
    K = tps_kernel(cdist(points, points)) + lambda_tps * m * np.eye(m)
    P = np.hstack([np.ones((m, 1)), points])
    A = np.zeros((m + 4, m + 4))
    A[:m, :m] = K
    A[:m, m:] = P
    A[m:, :m] = P.T
    b = np.zeros((m + 4, values.shape[1]))
    b[:m] = values

    try:
        solution = linalg.solve(A, b, assume_a='sym')
    except (linalg.LinAlgError, ValueError):
        logger.debug("symmetric TPS solve failed, retrying with LU")
        try:
            lu, piv = linalg.lu_factor(A)
            solution = linalg.lu_solve((lu, piv), b)
        except (linalg.LinAlgError, ValueError) as e:
            raise DegenerateConfigurationError("singular TPS system", str(e)) from e
    if not np.all(np.isfinite(solution)):
        raise DegenerateConfigurationError("singular TPS system", "non-finite solution")

    return TpsModel(points.copy(), solution[:m], solution[m:], float(lambda_tps))


def tps_fit(keypoints: KeypointSet, lambda_tps: float = 0.1) -> TpsModel:
    """Regularized 3D thin-plate spline: [[K + lambda*M*I, P], [P^T, 0]] [w; a] = [d; 0]"""
    return fit_tps_arrays(keypoints.points, keypoints.displacements, lambda_tps)


def tps_evaluate(model: TpsModel, grid: GridSpec) -> DisplacementField:
    centers = grid.voxel_centers().reshape(-1, 3)
    return DisplacementField(grid, model.evaluate_points(centers).reshape(grid.dims + (3,)))


class ThinPlateSplineInterpolator(BaseInterpolator):
    def __init__(self, lambda_tps: float = 0.1):
        super().__init__("tps")
        self.lambda_tps = float(lambda_tps)
        self.model = None

    def fit(self, keypoints: KeypointSet) -> 'ThinPlateSplineInterpolator':
        self.model = tps_fit(keypoints, self.lambda_tps)
        return self

    def evaluate(self, grid: GridSpec) -> DisplacementField:
        self._require_fitted()
        return tps_evaluate(self.model, grid)

    def is_fitted(self) -> bool:
        return self.model is not None
