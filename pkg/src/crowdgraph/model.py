"""End-to-end counting model: backbone -> PA-FPN -> density -> dual graph branches -> point heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import functional as fn
from .backbone import PAFPN, Backbone, BackboneConfig
from .density import DensityHead, DensityHeadConfig, gt_density_map
from .errors import ConfigError
from .gcn import GcnBranch, GcnConfig, fuse_features
from .graph import GraphConfig, SemanticGraph, build_dsg, build_rsg
from .layers import Module
from .losses import LossConfig, density_loss, joint_loss, point_loss_parts
from .points import Assignment, PointHead, PointHeadConfig, PointPrediction, hungarian_match
from .tensor import Tensor


@dataclass
class Switches:
    use_dp: bool = True  # density prediction head + density loss
    use_da: bool = True  # density-driven graph branch
    use_ra: bool = True  # representation-driven graph branch

    def validate(self) -> None:
        if self.use_da and not self.use_dp:
            raise ConfigError("ablation.use_da requires ablation.use_dp (the DA graph consumes the density map)")


@dataclass
class ModelConfig:
    backbone: BackboneConfig
    density_head: DensityHeadConfig
    graph: GraphConfig
    gcn: GcnConfig
    point_head: PointHeadConfig
    ablation: Switches


@dataclass
class ForwardOutput:
    features: Tensor
    density: Optional[Tensor]
    graphs: dict[str, SemanticGraph]
    fused: Tensor
    pred: PointPrediction


@dataclass
class LossBreakdown:
    joint: Tensor
    density: float
    cls: float
    loc: float
    assignment: Assignment


# fixed module order for seeding; each module draws from its own stream
_MODULE_STREAMS = ("backbone", "neck", "head", "density", "gcn_density", "gcn_representation")


class CrowdCounter(Module):
    def __init__(self, cfg: ModelConfig, seed: int):
        cfg.ablation.validate()
        cfg.graph.validate()
        self.cfg = cfg
        rngs = {name: np.random.default_rng([seed, i]) for i, name in enumerate(_MODULE_STREAMS)}
        bb = cfg.backbone
        self.backbone = Backbone(rngs["backbone"], bb)
        self.neck = PAFPN(rngs["neck"], bb)
        self.head = PointHead(rngs["head"], bb.fused_channels, bb.stride, cfg.point_head)
        self.density = DensityHead(rngs["density"], bb.fused_channels, cfg.density_head)
        self.gcn_density = GcnBranch(rngs["gcn_density"], bb.fused_channels, cfg.gcn, "density")
        self.gcn_representation = GcnBranch(rngs["gcn_representation"], bb.fused_channels, cfg.gcn, "representation")

    @property
    def stride(self) -> int:
        return self.cfg.backbone.stride

    def active_modules(self) -> dict[str, Module]:
        sw = self.cfg.ablation
        mods: dict[str, Module] = {"backbone": self.backbone, "neck": self.neck, "head": self.head}
        if sw.use_dp:
            mods["density"] = self.density
        if sw.use_da:
            mods["gcn_density"] = self.gcn_density
        if sw.use_ra:
            mods["gcn_representation"] = self.gcn_representation
        return mods

    def active_parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"{name}.{p}", t) for name, m in self.active_modules().items() for p, t in m.named_parameters()]

    def count_parameters(self) -> int:
        return sum(t.size for _, t in self.active_parameters())

    def forward(self, image: Tensor, graphs: Optional[dict[str, SemanticGraph]] = None) -> ForwardOutput:
        """``graphs`` replaces graph construction (adjacency) while keeping node features live."""
        sw = self.cfg.ablation
        f1, f2, f3 = self.backbone(image)
        f = self.neck(f1, f2, f3)
        _, h, w = f.shape
        m = self.density(f) if sw.use_dp else None
        built: dict[str, SemanticGraph] = {}
        branches = []
        if sw.use_da:
            g = build_dsg(f, m, self.cfg.graph) if graphs is None else _with_nodes(graphs["density"], f)
            built["density"] = g
            branches.append(self.gcn_density(g, h, w))
        if sw.use_ra:
            g = build_rsg(f, self.cfg.graph) if graphs is None else _with_nodes(graphs["representation"], f)
            built["representation"] = g
            branches.append(self.gcn_representation(g, h, w))
        fused = fuse_features(f, *branches)
        return ForwardOutput(f, m, built, fused, self.head(fused))

    __call__ = forward

    def loss(
        self,
        out: ForwardOutput,
        points: np.ndarray,
        image_hw: tuple[int, int],
        loss_cfg: LossConfig,
        assignment: Optional[Assignment] = None,
    ) -> LossBreakdown:
        """Joint objective for one image; matching is computed here unless supplied."""
        if assignment is None:
            tau = self.cfg.point_head.tau_scale * self.stride
            assignment = hungarian_match(out.pred, points, tau)
        parts = point_loss_parts(out.pred, points, assignment, loss_cfg)
        total = parts.total
        dens = 0.0
        if out.density is not None:
            target = gt_density_map(points, image_hw[0], image_hw[1], self.stride, self.cfg.density_head.sigma)
            dl = density_loss(out.density, target)
            dens = dl.item()
            total = joint_loss(total, dl)
        return LossBreakdown(total, dens, parts.cls.item(), parts.loc.item(), assignment)


def _with_nodes(g: SemanticGraph, f: Tensor) -> SemanticGraph:
    return SemanticGraph(fn.flatten_spatial(f), g.neighbors, g.kind, g.k)
