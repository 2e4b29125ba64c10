"""Density MSE, matched point loss, and their sum."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as fn
from .errors import ConfigError, DimensionError, InputError
from .points import Assignment, PointPrediction
from .tensor import Tensor


@dataclass
class LossConfig:
    lambda1: float = 2e-4  # localisation weight
    lambda2: float = 0.5  # negative-proposal weight
    eps_log: float = 1e-12

    def validate(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(f"loss: lambda1/lambda2 must be >= 0, got {self.lambda1}/{self.lambda2}")
        if not self.eps_log > 0:
            raise ConfigError("loss.eps_log: must be > 0")


def density_loss(pred: Tensor, target: np.ndarray | Tensor) -> Tensor:
    """Mean over cells of the squared difference."""
    target_arr = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target_arr.shape:
        raise DimensionError(f"density_loss shape mismatch: {pred.shape} vs {target_arr.shape}")
    diff = pred - target_arr
    return (diff * diff).mean()


def _log_conf(pred: PointPrediction, idx: np.ndarray, positive: bool, floor: float) -> Tensor:
    """Floored ``log(c)`` or ``log(1 - c)`` for the selected proposals.

    With logits available, ``log(1 - c) = log_sigmoid(-z)`` stays accurate
    when ``c`` rounds towards 1.
    """
    if pred.logits is not None:
        z = fn.gather_rows(pred.logits, idx)
        return fn.log_sigmoid(z if positive else -z, floor)
    c = fn.gather_rows(pred.confidence, idx)
    return fn.log(c if positive else 1.0 - c, floor)


@dataclass
class PointLossParts:
    total: Tensor
    cls: Tensor
    loc: Tensor


def point_loss_parts(
    pred: PointPrediction, gt: np.ndarray, assignment: Assignment, cfg: LossConfig
) -> PointLossParts:
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    m = len(pred)
    matched = assignment.gt_to_prop
    if matched.shape[0] != gt.shape[0] or len(np.unique(matched)) != len(matched) or assignment.num_proposals != m:
        raise InputError("assignment does not fit these predictions / ground truth")

    negatives = np.nonzero(assignment.negatives)[0]
    cls_sum = _log_conf(pred, negatives, False, cfg.eps_log).sum() * cfg.lambda2
    if len(matched):
        cls_sum = _log_conf(pred, matched, True, cfg.eps_log).sum() + cls_sum
    cls = cls_sum * (-1.0 / m)

    if len(matched):
        diff = fn.gather_rows(pred.points, matched) - gt
        loc = (diff * diff).sum() * (1.0 / len(matched))
    else:
        loc = Tensor(0.0)
    return PointLossParts(cls + loc * cfg.lambda1, cls, loc)


def point_loss(pred: PointPrediction, gt: np.ndarray, assignment: Assignment, cfg: LossConfig) -> Tensor:
    """Matched cross-entropy over all proposals plus ``lambda1`` x mean squared localisation error."""
    return point_loss_parts(pred, gt, assignment, cfg).total


def joint_loss(point: Tensor, density: Tensor) -> Tensor:
    return point + density
