"""Transformed-grid loss and the bidirectional / augmented / identity objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import affine
from .tensor import Tensor

GRID_SIDE = 20


@dataclass(frozen=True)
class BalanceParams:
    alpha: float = 0.5
    beta: float = 0.3
    gamma: float = 0.2

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma)
        if min(vals) < 0 or max(vals) <= 0:
            raise ValueError(f"balance parameters must be nonnegative with one positive: {vals}")


def loss_grid(side: int = GRID_SIDE) -> np.ndarray:
    """Homogeneous grid points (side*side, 3) on a symmetric lattice over [-1, 1]^2."""
    t = np.linspace(-1.0, 1.0, side)
    gx, gy = np.meshgrid(t, t)
    return np.stack([gx.ravel(), gy.ravel(), np.ones(side * side)], axis=-1)


def _as_tensor(p) -> Tensor:
    if isinstance(p, Tensor):
        return p
    return Tensor(affine.as_affine(p))


def grid_loss(theta_hat, theta_ref, grid: np.ndarray | None = None) -> Tensor:
    """Mean squared displacement between the grid mapped by two transforms.

    Both arguments may be (6,) or (N, 6) arrays or tensors; a batch loss is
    averaged over the batch.  Because the map is linear in the parameters,
    the displacement of a point equals the parameter difference applied to
    its homogeneous coordinates.
    """
    grid = loss_grid() if grid is None else grid
    diff = _as_tensor(theta_hat) - _as_tensor(theta_ref)
    if diff.ndim == 1:
        diff = diff.reshape(1, 6)
    n = diff.shape[0]
    disp = diff.reshape(n, 2, 3) @ grid.T  # (N, 2, P)
    return (disp**2).sum(axis=1).mean()


def loss_org(theta_st, theta_ts, theta_gt, grid=None) -> Tensor:
    gt = affine.as_affine(theta_gt)
    return grid_loss(theta_st, gt, grid) + grid_loss(theta_ts, affine.invert(gt), grid)


# the augmented pair shares the original ground truth
loss_aug = loss_org


def loss_id(theta_st, theta_ts, theta_st_aug, theta_ts_aug, grid=None, detach_aug: bool = False) -> Tensor:
    """Consistency between original-pair and augmented-pair predictions.

    Gradients flow through both arguments unless ``detach_aug`` is set.
    """
    if detach_aug:
        theta_st_aug = _as_tensor(theta_st_aug).detach()
        theta_ts_aug = _as_tensor(theta_ts_aug).detach()
    return grid_loss(theta_st, theta_st_aug, grid) + grid_loss(theta_ts, theta_ts_aug, grid)


def loss_terms(preds, theta_gt, grid=None, detach_aug: bool = False) -> dict[str, Tensor]:
    st, ts, st_aug, ts_aug = preds
    return {
        "l_org": loss_org(st, ts, theta_gt, grid),
        "l_aug": loss_aug(st_aug, ts_aug, theta_gt, grid),
        "l_id": loss_id(st, ts, st_aug, ts_aug, grid, detach_aug),
    }


def combine(terms: dict[str, Tensor], bal: BalanceParams) -> Tensor:
    return bal.alpha * terms["l_org"] + bal.beta * terms["l_aug"] + bal.gamma * terms["l_id"]


def total_loss(preds, theta_gt, bal: BalanceParams = BalanceParams(), grid=None, detach_aug: bool = False) -> Tensor:
    return combine(loss_terms(preds, theta_gt, grid, detach_aug), bal)
