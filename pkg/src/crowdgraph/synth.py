"""Synthetic crowd scenes with a perspective gradient, augmentation, and count metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, UsageError


@dataclass
class SceneConfig:
    size: list[int] = field(default_factory=lambda: [128, 128])  # H, W
    count_range: list[int] = field(default_factory=lambda: [5, 80])
    cluster_range: list[int] = field(default_factory=lambda: [1, 4])
    cluster_spread: float = 0.12  # std of a cluster, fraction of image size
    scatter_fraction: float = 0.3  # individuals placed uniformly instead of in a cluster
    radius_near: float = 3.5  # blob radius at the bottom row, pixels
    perspective: float = 0.6  # radius shrinks by this fraction towards the top row
    contrast_range: list[float] = field(default_factory=lambda: [0.35, 0.9])
    background: float = 0.2
    noise: float = 0.03

    def validate(self) -> None:
        if len(self.size) != 2 or min(self.size) < 8:
            raise ConfigError(f"scene.size: need [H, W] with both >= 8, got {self.size}")
        lo, hi = self.count_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"scene.count_range: need 0 <= lo <= hi, got {self.count_range}")
        if self.cluster_range[0] < 1 or self.cluster_range[1] < self.cluster_range[0]:
            raise ConfigError(f"scene.cluster_range: invalid {self.cluster_range}")
        if not 0 <= self.perspective < 1:
            raise ConfigError("scene.perspective: must lie in [0, 1)")
        if self.radius_near * (1 - self.perspective) < 1:
            raise ConfigError("scene: far-row radius radius_near*(1-perspective) must be >= 1 pixel")
        if self.noise < 0 or not 0 <= self.scatter_fraction <= 1:
            raise ConfigError("scene.noise / scene.scatter_fraction out of range")


@dataclass
class Scene:
    image: np.ndarray  # 3 x H x W in [0, 1]
    points: np.ndarray  # n x 2, (x, y) pixels; pixel c spans [c, c+1)
    seed: int

    @property
    def count(self) -> int:
        return int(self.points.shape[0])


def blob_radius(y: np.ndarray | float, height: int, cfg: SceneConfig) -> np.ndarray:
    """Near-large / far-small: radius grows linearly from the top row to the bottom."""
    return cfg.radius_near * (1.0 - cfg.perspective * (1.0 - np.asarray(y) / height))


def _sample_points(rng: np.random.Generator, n: int, h: int, w: int, cfg: SceneConfig) -> np.ndarray:
    n_clusters = int(rng.integers(cfg.cluster_range[0], cfg.cluster_range[1] + 1))
    centers = rng.uniform([0.1 * w, 0.1 * h], [0.9 * w, 0.9 * h], size=(n_clusters, 2))
    spread = cfg.cluster_spread * np.array([w, h])
    pts = np.empty((n, 2))
    for k in range(n):
        while True:
            if rng.random() < cfg.scatter_fraction:
                p = rng.uniform([0, 0], [w, h])
            else:
                c = centers[rng.integers(n_clusters)]
                # far (top) clusters are packed tighter
                p = c + rng.normal(size=2) * spread * (0.5 + 0.5 * c[1] / h)
            if 1.0 <= p[0] < w - 1.0 and 1.0 <= p[1] < h - 1.0:
                pts[k] = p
                break
    return pts


def render(points: np.ndarray, h: int, w: int, cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    rows = np.arange(h) + 0.5
    cols = np.arange(w) + 0.5
    image = np.empty((3, h, w))
    tint = rng.uniform(0.8, 1.2, size=3)
    image[:] = (cfg.background * tint)[:, None, None] * (0.8 + 0.4 * rows / h)[None, :, None]
    for x, y in points:
        r = float(blob_radius(y, h, cfg))
        y0, y1 = max(0, int(y - 3 * r)), min(h, int(y + 3 * r) + 2)
        x0, x1 = max(0, int(x - 3 * r)), min(w, int(x + 3 * r) + 2)
        d2 = (rows[y0:y1, None] - y) ** 2 + (cols[None, x0:x1] - x) ** 2
        blob = np.exp(-d2 / (2 * r * r))
        color = rng.uniform(*cfg.contrast_range) * rng.uniform(0.6, 1.0, size=3)
        image[:, y0:y1, x0:x1] += color[:, None, None] * blob[None]
    image += rng.normal(0.0, cfg.noise, size=image.shape) if cfg.noise > 0 else 0.0
    return np.clip(image, 0.0, 1.0)


def generate_scene(cfg: SceneConfig, seed: int) -> Scene:
    cfg.validate()
    rng = np.random.default_rng(seed)
    h, w = cfg.size
    n = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    points = _sample_points(rng, n, h, w, cfg) if n else np.zeros((0, 2))
    return Scene(render(points, h, w, cfg, rng), points, seed)


@dataclass
class AugmentConfig:
    enabled: bool = True
    scale_range: list[float] = field(default_factory=lambda: [0.7, 1.3])
    crop: list[int] = field(default_factory=lambda: [64, 64])  # H, W
    contrast_range: list[float] = field(default_factory=lambda: [0.7, 1.3])

    def validate(self, scene: SceneConfig) -> None:
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigError(f"augment.scale_range: invalid {self.scale_range}")
        if not 0 < self.contrast_range[0] <= self.contrast_range[1]:
            raise ConfigError(f"augment.contrast_range: invalid {self.contrast_range}")
        if len(self.crop) != 2 or min(self.crop) < 1:
            raise ConfigError(f"augment.crop: need [H, W] >= 1, got {self.crop}")
        if self.enabled:
            smallest = [int(round(s * lo)) for s in scene.size]
            if self.crop[0] > smallest[0] or self.crop[1] > smallest[1]:
                raise ConfigError(
                    f"augment.crop {self.crop} exceeds the smallest scaled image {smallest}"
                )


def apply_augment(scene: Scene, scale: float, crop_origin: tuple[int, int], crop: tuple[int, int], gamma: float) -> Scene:
    """Deterministic core of :func:`augment`: nearest rescale, crop at (y0, x0), contrast."""
    _, h, w = scene.image.shape
    nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    ch, cw = crop
    y0, x0 = crop_origin
    if ch > nh or cw > nw or y0 < 0 or x0 < 0 or y0 + ch > nh or x0 + cw > nw:
        raise ConfigError(f"crop {crop} at {crop_origin} does not fit a {nh}x{nw} image")
    fy, fx = nh / h, nw / w
    src_r = np.minimum((np.arange(nh) + 0.5) / fy, h - 1).astype(int)
    src_c = np.minimum((np.arange(nw) + 0.5) / fx, w - 1).astype(int)
    scaled = scene.image[:, src_r[:, None], src_c[None, :]]
    image = scaled[:, y0 : y0 + ch, x0 : x0 + cw]
    image = np.clip(gamma * (image - 0.5) + 0.5, 0.0, 1.0)
    pts = scene.points * np.array([fx, fy]) - np.array([x0, y0])
    inside = (pts[:, 0] >= 0) & (pts[:, 0] < cw) & (pts[:, 1] >= 0) & (pts[:, 1] < ch)
    return Scene(image, pts[inside], scene.seed)


def augment(scene: Scene, rng: np.random.Generator, cfg: AugmentConfig) -> Scene:
    _, h, w = scene.image.shape
    scale = rng.uniform(*cfg.scale_range)
    nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    ch, cw = cfg.crop
    if ch > nh or cw > nw:
        raise ConfigError(f"crop {cfg.crop} larger than scaled image {nh}x{nw}")
    y0 = int(rng.integers(0, nh - ch + 1))
    x0 = int(rng.integers(0, nw - cw + 1))
    gamma = rng.uniform(*cfg.contrast_range)
    return apply_augment(scene, scale, (y0, x0), (ch, cw), gamma)


def mae_mse(pred_counts: Sequence[float], gt_counts: Sequence[float]) -> tuple[float, float]:
    """Mean absolute error and root-mean-square error (the counting "MSE")."""
    p = np.asarray(pred_counts, dtype=np.float64)
    g = np.asarray(gt_counts, dtype=np.float64)
    if p.size == 0 or p.shape != g.shape:
        raise UsageError(f"mae_mse needs equal, nonempty lists; got {p.shape} and {g.shape}")
    e = p - g
    return float(np.mean(np.abs(e))), float(np.sqrt(np.mean(e * e)))


def write_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6), 8 bits per channel."""
    _, h, w = image.shape
    data = np.rint(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def write_points(path, points: np.ndarray) -> None:
    lines = ["x,y"] + [f"{x!r},{y!r}" for x, y in np.asarray(points).tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def split_seeds(seed: int, split: str, n: int) -> list[int]:
    """Disjoint seed ranges per split."""
    offset = {"train": 0, "test": 1_000_000}[split]
    return [seed * 10_000_000 + offset + i for i in range(n)]


def write_manifest(path, splits: dict[str, list[int]], scene_cfg: SceneConfig) -> None:
    from dataclasses import asdict

    doc = {"scene": asdict(scene_cfg), "splits": splits}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
