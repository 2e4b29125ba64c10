"""Density prediction head and ground-truth density synthesis."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError
from .layers import Conv2d, ConvBNReLU, Module
from .tensor import Tensor


@dataclass
class DensityHeadConfig:
    blocks: int = 3
    hidden: int = 64
    sigma: float = 2.0  # ground-truth kernel std, in map cells

    def validate(self) -> None:
        if self.blocks < 1:
            raise ConfigError(f"density_head.blocks: must be >= 1, got {self.blocks}")
        if self.hidden < 1:
            raise ConfigError("density_head.hidden: must be >= 1")
        if not self.sigma > 0:
            raise ConfigError(f"density_head.sigma: must be > 0, got {self.sigma}")


class DensityHead(Module):
    """``blocks`` x ReLU(BN(Conv3x3)) followed by a 1x1 conv to one channel."""

    def __init__(self, rng: np.random.Generator, in_channels: int, cfg: DensityHeadConfig):
        cfg.validate()
        widths = [in_channels] + [cfg.hidden] * cfg.blocks
        self.blocks = [ConvBNReLU(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]
        self.out = Conv2d(rng, cfg.hidden, 1, kernel=1)

    def __call__(self, f: Tensor) -> Tensor:
        return predict_density(f, self)


def predict_density(f: Tensor, head: DensityHead) -> Tensor:
    x = f
    for block in head.blocks:
        x = block(x)
    return head.out(x)


def gt_density_map(
    points: Sequence[tuple[float, float]], height: int, width: int, stride: int, sigma: float
) -> np.ndarray:
    """Sum of per-point discrete Gaussians on the stride-``stride`` cell grid.

    ``height``/``width`` are image pixels.  Each kernel is centred at
    ``(x/stride, y/stride)`` in cell units (cell ``j`` spans ``[j, j+1)``),
    truncated at radius ``3*sigma`` and renormalised over in-map cells, so
    every point contributes mass exactly 1.  Returns a 1 x H/s x W/s array.
    """
    if not sigma > 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    hm, wm = height // stride, width // stride
    out = np.zeros((1, hm, wm))
    if len(points) == 0:
        return out
    radius = 3.0 * sigma
    cy_all = np.arange(hm) + 0.5
    cx_all = np.arange(wm) + 0.5
    for x, y in points:
        if not (0 <= x < width and 0 <= y < height):
            raise InputError(f"point ({x}, {y}) lies outside the {width}x{height} image")
        u, v = x / stride, y / stride
        i0, i1 = max(0, int(np.floor(v - radius))), min(hm, int(np.ceil(v + radius)) + 1)
        j0, j1 = max(0, int(np.floor(u - radius))), min(wm, int(np.ceil(u + radius)) + 1)
        dy = cy_all[i0:i1, None] - v
        dx = cx_all[None, j0:j1] - u
        d2 = dy * dy + dx * dx
        k = np.where(d2 <= radius * radius, np.exp(-d2 / (2.0 * sigma * sigma)), 0.0)
        total = k.sum()
        if total <= 0:
            # kernel support missed every cell centre; fall back to the containing cell
            k = np.zeros_like(d2)
            k[min(int(v), hm - 1) - i0, min(int(u), wm - 1) - j0] = 1.0
            total = 1.0
        out[0, i0:i1, j0:j1] += k / total
    return out


def write_pgm(path, density: np.ndarray) -> None:
    """ASCII PGM (P2), values scaled to 0-255 by the map maximum."""
    m = np.asarray(density, dtype=np.float64).reshape(density.shape[-2:])
    peak = m.max()
    scaled = np.zeros(m.shape, dtype=int) if peak <= 0 else np.rint(np.clip(m, 0, None) / peak * 255).astype(int)
    lines = ["P2", f"{m.shape[1]} {m.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in scaled]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines() if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise InputError(f"{path}: not an ASCII PGM")
    w, h, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4 : 4 + w * h], dtype=int).reshape(h, w)


def write_density_csv(path, density: np.ndarray) -> None:
    """Raw values, one map row per line; ``repr`` keeps float64 round-trips exact."""
    m = np.asarray(density, dtype=np.float64).reshape(density.shape[-2:])
    Path(path).write_text("\n".join(",".join(repr(float(v)) for v in row) for row in m) + "\n")


def read_density_csv(path) -> np.ndarray:
    rows = [line.split(",") for line in Path(path).read_text().splitlines() if line]
    return np.array(rows, dtype=np.float64)
