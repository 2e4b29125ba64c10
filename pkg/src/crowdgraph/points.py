"""Point proposals: anchors, regression/classification heads, one-to-one matching."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import functional as fn
from .errors import CapacityError, ConfigError
from .layers import Conv2d, Module
from .tensor import Tensor


@dataclass
class PointHeadConfig:
    refs_per_side: int = 2  # R: R x R anchors per cell
    hidden: int = 64
    tau_scale: float = 0.05  # matching confidence weight = tau_scale * stride
    threshold: float = 0.5

    def validate(self) -> None:
        if self.refs_per_side < 1:
            raise ConfigError(f"point_head.refs_per_side: must be >= 1, got {self.refs_per_side}")
        if self.hidden < 1:
            raise ConfigError("point_head.hidden: must be >= 1")
        if not 0 < self.threshold < 1:
            raise ConfigError(f"point_head.threshold: must lie in (0, 1), got {self.threshold}")
        if self.tau_scale < 0:
            raise ConfigError("point_head.tau_scale: must be >= 0")


def generate_anchors(height: int, width: int, stride: int, refs_per_side: int) -> np.ndarray:
    """(R*R*H*W) x 2 array of (x, y) pixels; index order (cell row, cell col, u, v)."""
    if refs_per_side < 1:
        raise ConfigError(f"refs_per_side must be >= 1, got {refs_per_side}")
    r = refs_per_side
    i, j, u, v = np.meshgrid(np.arange(height), np.arange(width), np.arange(r), np.arange(r), indexing="ij")
    x = j * stride + (v + 0.5) * stride / r
    y = i * stride + (u + 0.5) * stride / r
    return np.stack([x.ravel(), y.ravel()], axis=1).astype(np.float64)


@dataclass
class PointPrediction:
    anchors: np.ndarray  # M x 2
    offsets: Tensor  # M x 2, pixels
    confidence: Tensor  # M, in (0, 1)
    logits: Optional[Tensor] = None  # pre-sigmoid scores; the loss prefers these when present

    @property
    def points(self) -> Tensor:
        return self.offsets + self.anchors

    def __len__(self) -> int:
        return self.anchors.shape[0]


class _Head(Module):
    def __init__(self, rng, c_in: int, hidden: int, c_out: int):
        self.conv1 = Conv2d(rng, c_in, hidden)
        self.conv2 = Conv2d(rng, hidden, hidden)
        self.out = Conv2d(rng, hidden, c_out, zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(fn.relu(self.conv2(fn.relu(self.conv1(x)))))


class PointHead(Module):
    """Parallel 3-layer conv heads.  Final layers start at zero: offsets 0, confidence 0.5."""

    def __init__(self, rng: np.random.Generator, in_channels: int, stride: int, cfg: PointHeadConfig):
        cfg.validate()
        self.stride = stride
        self.refs = cfg.refs_per_side
        r2 = self.refs * self.refs
        self.regression = _Head(rng, in_channels, cfg.hidden, 2 * r2)
        self.classification = _Head(rng, in_channels, cfg.hidden, r2)

    def __call__(self, f: Tensor) -> PointPrediction:
        return predict_points(f, self)


def predict_points(f: Tensor, head: PointHead) -> PointPrediction:
    _, h, w = f.shape
    r2 = head.refs * head.refs
    reg = head.regression(f)  # 2R^2 x H x W
    cls = head.classification(f)  # R^2 x H x W
    offsets = reg.reshape(r2, 2, h, w).permute(2, 3, 0, 1).reshape(h * w * r2, 2) * float(head.stride)
    logits = cls.permute(1, 2, 0).reshape(h * w * r2)
    anchors = generate_anchors(h, w, head.stride, head.refs)
    return PointPrediction(anchors, offsets, fn.sigmoid(logits), logits)


def linear_assignment(cost: np.ndarray) -> np.ndarray:
    """Exact min-cost assignment of every row to a distinct column (rows <= cols).

    Shortest augmenting paths with dual potentials, O(n^2 m); the inner scan
    over columns is vectorised.  Returns the column chosen for each row.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n > m:
        raise CapacityError(f"{n} rows cannot be matched into {m} columns")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j]: 1-based row holding column j, 0 if free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    cols = np.zeros(n, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            cols[owner[j] - 1] = j - 1
    return cols


@dataclass
class Assignment:
    """``gt_to_prop[i]`` is the proposal matched to ground-truth point ``i``."""

    gt_to_prop: np.ndarray
    num_proposals: int

    @property
    def negatives(self) -> np.ndarray:
        mask = np.ones(self.num_proposals, dtype=bool)
        mask[self.gt_to_prop] = False
        return mask


def matching_cost(pred_points: np.ndarray, confidence: np.ndarray, gt: np.ndarray, tau: float) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    dist = np.linalg.norm(gt[:, None, :] - pred_points[None, :, :], axis=-1)
    return dist - tau * confidence[None, :]


def hungarian_match(pred: PointPrediction, gt: Sequence[tuple[float, float]] | np.ndarray, tau: float) -> Assignment:
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    m = len(pred)
    if gt.shape[0] > m:
        raise CapacityError(f"{gt.shape[0]} ground-truth points exceed {m} proposals")
    cost = matching_cost(pred.points.data, pred.confidence.data, gt, tau)
    return Assignment(linear_assignment(cost), m)


def count_from_points(pred: PointPrediction, threshold: float = 0.5) -> tuple[int, np.ndarray]:
    keep = pred.confidence.data >= threshold
    return int(keep.sum()), pred.points.data[keep]


def write_points_csv(path, pred: PointPrediction, threshold: Optional[float] = None) -> None:
    """``x,y,confidence`` per proposal (only those at or above ``threshold`` if given)."""
    pts = pred.points.data
    conf = pred.confidence.data
    keep = np.ones(len(conf), dtype=bool) if threshold is None else conf >= threshold
    lines = ["x,y,confidence"] + [
        f"{x!r},{y!r},{c!r}" for (x, y), c in zip(pts[keep].tolist(), conf[keep].tolist())
    ]
    Path(path).write_text("\n".join(lines) + "\n")
