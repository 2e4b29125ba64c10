"""Toy three-stage CNN backbone and a minimal PA-FPN fusion neck."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as fn
from .errors import ConfigError, InputError, InvariantError
from .layers import Conv2d, ConvBNReLU, ConvReLU, Module
from .tensor import Tensor


@dataclass
class BackboneConfig:
    channels: list[int] = field(default_factory=lambda: [16, 32, 64])
    convs_per_stage: int = 2
    fused_channels: int = 64
    stride: int = 8
    batchnorm: bool = True

    def validate(self) -> None:
        if len(self.channels) != 3:
            raise ConfigError(f"backbone.channels: exactly 3 stages required, got {self.channels}")
        if any(c < 1 for c in self.channels):
            raise ConfigError(f"backbone.channels: must be positive, got {self.channels}")
        if self.convs_per_stage < 1:
            raise ConfigError("backbone.convs_per_stage: must be >= 1")
        if self.fused_channels < 1:
            raise ConfigError("backbone.fused_channels: must be >= 1")
        if self.stride != 8:
            raise ConfigError(f"backbone.stride: three 2x2 pools give stride 8, got {self.stride}")


def pad_to_multiple(image: np.ndarray, s: int) -> np.ndarray:
    """Reflect-pad a C x H x W array on the bottom/right to multiples of ``s``."""
    _, h, w = image.shape
    ph, pw = (-h) % s, (-w) % s
    if ph == 0 and pw == 0:
        return image
    return np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="reflect")


class Backbone(Module):
    def __init__(self, rng: np.random.Generator, cfg: BackboneConfig, in_channels: int = 3):
        cfg.validate()
        self.cfg = cfg
        self.stages = []
        c_prev = in_channels
        for c in cfg.channels:
            convs = []
            for _ in range(cfg.convs_per_stage):
                convs.append(ConvBNReLU(rng, c_prev, c) if cfg.batchnorm else ConvReLU(rng, c_prev, c))
                c_prev = c
            self.stages.append(_Stage(convs))

    def __call__(self, image: Tensor) -> list[Tensor]:
        return extract_features(image, self)


class _Stage(Module):
    def __init__(self, convs: list[ConvBNReLU]):
        self.convs = convs

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = conv(x)
        return fn.maxpool2x2(x)


def extract_features(image: Tensor, backbone: Backbone) -> list[Tensor]:
    """Return feature maps at strides 2, 4, 8."""
    s = backbone.cfg.stride
    if image.ndim != 3 or image.shape[1] % s or image.shape[2] % s:
        raise InputError(f"image shape {image.shape} must be C x H x W with H, W multiples of {s}")
    feats = []
    x = image
    for stage in backbone.stages:
        x = stage(x)
        feats.append(x)
    return feats


class PAFPN(Module):
    """Lateral 1x1 convs, a top-down add path and a bottom-up add path; output at stride 8."""

    def __init__(self, rng: np.random.Generator, cfg: BackboneConfig):
        c = cfg.fused_channels
        self.channels = c
        self.lateral = [Conv2d(rng, c_in, c, kernel=1) for c_in in cfg.channels]
        self.down = [Conv2d(rng, c, c, kernel=3, stride=2) for _ in range(2)]

    def __call__(self, f1: Tensor, f2: Tensor, f3: Tensor) -> Tensor:
        return fuse_pafpn(f1, f2, f3, self)


def _downsample(conv: Conv2d, x: Tensor) -> Tensor:
    # "same" padding for even inputs: one extra zero row/column at bottom/right
    x = fn.pad2d(x, 0, 1, 0, 1)
    return fn.conv2d(x, conv.weight, conv.bias, stride=2, pad=0)


def fuse_pafpn(f1: Tensor, f2: Tensor, f3: Tensor, neck: PAFPN) -> Tensor:
    if not (f1.shape[1] == 2 * f2.shape[1] == 4 * f3.shape[1] and f1.shape[2] == 2 * f2.shape[2] == 4 * f3.shape[2]):
        raise InputError(f"pyramid levels must sit at strides 2/4/8: {f1.shape}, {f2.shape}, {f3.shape}")
    l1, l2, l3 = (lat(f) for lat, f in zip(neck.lateral, (f1, f2, f3)))
    for lat in (l1, l2, l3):
        if lat.shape[0] != neck.channels:
            raise InvariantError(f"lateral output has {lat.shape[0]} channels, expected {neck.channels}")
    p3 = l3
    p2 = l2 + fn.upsample_nearest(p3, 2)
    p1 = l1 + fn.upsample_nearest(p2, 2)
    n2 = p2 + _downsample(neck.down[0], p1)
    n3 = p3 + _downsample(neck.down[1], n2)
    return n3
