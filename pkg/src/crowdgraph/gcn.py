"""Graph convolution over semantic graphs: H' = ReLU(D^-1/2 A D^-1/2 H W)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as fn
from .errors import ConfigError, DimensionError, InvariantError
from .graph import SemanticGraph
from .layers import Module, uniform_fan_in
from .tensor import Tensor, matmul


@dataclass
class GcnConfig:
    layers: int = 2
    # scale of the last layer's init relative to fan-in uniform; 0 starts the branch dead
    final_gain: float = 0.1

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError(f"gcn.layers: must be >= 1, got {self.layers}")
        if self.final_gain < 0:
            raise ConfigError("gcn.final_gain: must be >= 0")


@dataclass
class NormalizedAdjacency:
    neighbors: np.ndarray  # N x w column indices
    values: np.ndarray  # N x w entries of D^-1/2 A D^-1/2

    def to_dense(self) -> np.ndarray:
        n = self.neighbors.shape[0]
        dense = np.zeros((n, n))
        np.add.at(dense, (np.repeat(np.arange(n), self.neighbors.shape[1]), self.neighbors.ravel()), self.values.ravel())
        return dense


def normalize_adjacency(neighbors: np.ndarray) -> NormalizedAdjacency:
    """Symmetric degree normalisation of a boolean row-list adjacency.

    Degrees are row sums, for columns too (``d_j`` is the row sum of row j),
    which applies the formula verbatim to a directed adjacency.
    """
    neighbors = np.asarray(neighbors, dtype=np.int64)
    degree = np.full(neighbors.shape[0], neighbors.shape[1], dtype=np.float64)
    if neighbors.shape[1] == 0:
        raise InvariantError("adjacency row with zero sum: self-loops missing")
    return NormalizedAdjacency(neighbors, 1.0 / np.sqrt(degree[:, None] * degree[neighbors]))


def gcn_layer(h: Tensor, adj: NormalizedAdjacency, weight: Tensor) -> Tensor:
    if h.ndim != 2 or weight.ndim != 2 or h.shape[1] != weight.shape[0]:
        raise DimensionError(f"gcn_layer shape mismatch: H {h.shape}, W {weight.shape}")
    if h.shape[0] != adj.neighbors.shape[0]:
        raise DimensionError(f"gcn_layer: H has {h.shape[0]} rows, adjacency {adj.neighbors.shape[0]}")
    return fn.relu(matmul(fn.neighbor_aggregate(adj.neighbors, adj.values, h), weight))


class GcnBranch(Module):
    def __init__(self, rng: np.random.Generator, channels: int, cfg: GcnConfig, name: str):
        cfg.validate()
        self.name = name
        self.weights = []
        for i in range(cfg.layers):
            gain = cfg.final_gain if i == cfg.layers - 1 else 1.0
            self.weights.append(uniform_fan_in(rng, (channels, channels), channels, gain=gain))

    def named_parameters(self, prefix: str = ""):
        for i, w in enumerate(self.weights):
            yield f"{prefix}weights.{i}", w

    def __call__(self, graph: SemanticGraph, height: int, width: int) -> Tensor:
        return branch_forward(graph, self, height, width)


def branch_forward(graph: SemanticGraph, branch: GcnBranch, height: int, width: int) -> Tensor:
    """Run every layer over the graph and reshape back to C_out x H x W."""
    if graph.num_nodes != height * width or graph.nodes.shape[0] != graph.num_nodes:
        raise InvariantError(f"graph has {graph.num_nodes} nodes, map is {height}x{width}")
    adj = normalize_adjacency(graph.neighbors)
    h = graph.nodes
    for w in branch.weights:
        h = gcn_layer(h, adj, w)
    return fn.unflatten_spatial(h, height, width)


def fuse_features(f: Tensor, *branches: Tensor) -> Tensor:
    """Elementwise sum of ``f`` and each branch output."""
    out = f
    for b in branches:
        if b.shape != f.shape:
            raise DimensionError(f"fuse_features: {b.shape} vs {f.shape}")
        out = out + b
    return out
