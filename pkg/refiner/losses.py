"""
Training objective: voxel MSE plus a penalty on negative Jacobian
determinants over healthy tissue.
"""
from typing import Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from fields.grid import DisplacementField, check_same_grid
from utils.errors import ValidationError


def _gradient(t: torch.Tensor, dim: int, step: float) -> torch.Tensor:
    """np.gradient(edge_order=1) along dim: central inside, one-sided on the two end slabs"""
    n = t.shape[dim]
    first = (t.narrow(dim, 1, 1) - t.narrow(dim, 0, 1)) / step
    inner = (t.narrow(dim, 2, n - 2) - t.narrow(dim, 0, n - 2)) / (2.0 * step)
    last = (t.narrow(dim, n - 1, 1) - t.narrow(dim, n - 2, 1)) / step
    return torch.cat([first, inner, last], dim=dim)


def jacobian_determinant(phi: torch.Tensor, spacing: Sequence[float]) -> torch.Tensor:
    """det(I + grad phi) for phi of shape (B, 3, D, W, H); returns (B, D, W, H)"""
    if any(n < 3 for n in phi.shape[2:]):
        raise ValidationError(f"jacobian needs at least 3 voxels per axis, got {tuple(phi.shape[2:])}")
    # j[c][a] = d(x_c + phi_c)/dx_a
    j = [[_gradient(phi[:, c], a + 1, float(spacing[a])) for a in range(3)] for c in range(3)]
    for c in range(3):
        j[c][c] = j[c][c] + 1.0
    return (j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
            - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]))


def refiner_loss(phi_pred: torch.Tensor, phi_gt: torch.Tensor, healthy_mask: torch.Tensor,
                 lambda_reg: float, spacing: Sequence[float]) -> torch.Tensor:
    """mean((pred - gt)^2) + lambda / |healthy| * sum_healthy ReLU(-det J)"""
    data_term = F.mse_loss(phi_pred, phi_gt)
    if lambda_reg == 0:
        return data_term
    mask = healthy_mask.expand(phi_pred.shape[0], *phi_pred.shape[2:])
    folding = F.relu(-jacobian_determinant(phi_pred, spacing))
    return data_term + lambda_reg * folding[mask].sum() / mask.sum()


def loss(phi_pred: DisplacementField, phi_gt: DisplacementField, healthy_mask: np.ndarray,
         lambda_reg: float) -> Tuple[float, np.ndarray]:
    """Loss value and its gradient w.r.t. phi_pred (same layout as phi_pred.vectors)"""
    check_same_grid("ground-truth field", phi_pred.grid, phi_gt.grid)
    healthy_mask = np.asarray(healthy_mask, dtype=bool)
    if healthy_mask.shape != phi_pred.grid.dims:
        raise ValidationError(f"healthy mask shape {healthy_mask.shape} does not match grid {phi_pred.grid.dims}")
    if not np.any(healthy_mask):
        raise ValidationError("healthy mask is empty")

    pred = torch.tensor(np.moveaxis(phi_pred.vectors, -1, 0)[None], dtype=torch.float64, requires_grad=True)
    gt = torch.tensor(np.moveaxis(phi_gt.vectors, -1, 0)[None], dtype=torch.float64)
    value = refiner_loss(pred, gt, torch.from_numpy(healthy_mask), lambda_reg, phi_pred.grid.spacing)
    value.backward()
    grad = np.moveaxis(pred.grad[0].numpy(), 0, -1).copy()
    return float(value.item()), grad
