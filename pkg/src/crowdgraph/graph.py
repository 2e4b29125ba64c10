"""Density-driven and representation-driven semantic graphs over feature-map cells.

Every cell of a C x H x W map is a node (row-major order).  Each node links to
its K most similar other nodes plus itself.  Adjacency is directed and stored
as an ``N x (K+1)`` array of sorted neighbour indices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from . import functional as fn
from .errors import ConfigError, InvariantError
from .tensor import Tensor

BLOCK_ROWS = 256

Direction = Literal["smallest", "largest"]


@dataclass
class GraphConfig:
    k: int = 4

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError(f"graph.k: must be >= 1, got {self.k}")


@dataclass
class SemanticGraph:
    nodes: Tensor  # N x C
    neighbors: np.ndarray  # N x (k+1) int, each row sorted, contains its own index
    kind: str
    k: int

    @property
    def num_nodes(self) -> int:
        return self.neighbors.shape[0]

    def to_json(self) -> dict:
        return {
            "N": int(self.num_nodes),
            "K": int(self.k),
            "kind": self.kind,
            "neighbors": self.neighbors.tolist(),
        }


# counts rows with zero norm seen by representation_similarity
degenerate_rows = {"count": 0}


def density_similarity(m_flat: np.ndarray, rows: slice | None = None) -> np.ndarray:
    """``S[i, j] = |m_i - m_j|`` (smaller is more similar)."""
    m = np.asarray(m_flat, dtype=np.float64).ravel()
    r = m if rows is None else m[rows]
    return np.abs(r[:, None] - m[None, :])


def _unit_rows(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(f, axis=1)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    return f / safe[:, None], zero


def representation_similarity(f_flat: np.ndarray, rows: slice | None = None) -> np.ndarray:
    """Cosine similarity between node rows (larger is more similar).

    A zero-norm row gets similarity 0 to every other node and 1 to itself;
    such rows are tallied in ``degenerate_rows``.
    """
    f = np.asarray(f_flat, dtype=np.float64)
    unit, zero = _unit_rows(f)
    idx = np.arange(f.shape[0]) if rows is None else np.arange(f.shape[0])[rows]
    sim = unit[idx] @ unit.T
    if zero.any():
        degenerate_rows["count"] += int(zero[idx].sum())
        sim[np.arange(len(idx)), idx] = np.where(zero[idx], 1.0, sim[np.arange(len(idx)), idx])
    # rows of unit vectors: the diagonal is 1 up to rounding, pin it
    sim[np.arange(len(idx)), idx] = 1.0
    return sim


def _select_rows(score: np.ndarray, row_ids: np.ndarray, k: int, direction: Direction) -> np.ndarray:
    """Per-row top-k (self excluded) by partial selection, ties to the lower index."""
    s = score if direction == "smallest" else -score
    s = s.astype(np.float64, copy=True)
    s[np.arange(len(row_ids)), row_ids] = np.inf
    if k == 0:
        chosen = np.empty((len(row_ids), 0), dtype=np.int64)
    else:
        kth = np.partition(s, k - 1, axis=1)[:, k - 1 : k]
        below = s < kth
        tied = s == kth
        need = k - below.sum(axis=1, keepdims=True)
        take = below | (tied & (np.cumsum(tied, axis=1) <= need))
        chosen = np.nonzero(take)[1].reshape(len(row_ids), k)
    out = np.concatenate([chosen, row_ids[:, None]], axis=1)
    out.sort(axis=1)
    return out


def topk_adjacency(score: np.ndarray, k: int, direction: Direction) -> np.ndarray:
    """Directed K-nearest adjacency with self-loops from a dense N x N score matrix."""
    n = score.shape[0]
    if score.shape != (n, n):
        raise ConfigError(f"score matrix must be square, got {score.shape}")
    if not 0 <= k < n:
        raise ConfigError(f"K={k} must satisfy 1 <= K < N={n}")
    if direction not in ("smallest", "largest"):
        raise ConfigError(f"direction must be 'smallest' or 'largest', got {direction!r}")
    return _select_rows(np.asarray(score, dtype=np.float64), np.arange(n), k, direction)


def _blocked_adjacency(similarity, data: np.ndarray, n: int, k: int, direction: Direction) -> np.ndarray:
    blocks = []
    for start in range(0, n, BLOCK_ROWS):
        rows = slice(start, min(n, start + BLOCK_ROWS))
        blocks.append(_select_rows(similarity(data, rows), np.arange(n)[rows], k, direction))
    return np.concatenate(blocks, axis=0)


def _effective_k(k: int, n: int) -> int:
    return min(k, n - 1)


def build_dsg(f: Tensor, m: Tensor | np.ndarray, cfg: GraphConfig) -> SemanticGraph:
    """Nodes are the rows of flattened ``f``; edges join cells with the closest density."""
    m_arr = m.data if isinstance(m, Tensor) else np.asarray(m)
    if m_arr.reshape(-1, *m_arr.shape[-2:]).shape[-2:] != f.shape[1:]:
        raise InvariantError(f"density map {m_arr.shape} is not aligned with features {f.shape}")
    nodes = fn.flatten_spatial(f)
    n = nodes.shape[0]
    k = _effective_k(cfg.k, n)
    adj = _blocked_adjacency(density_similarity, m_arr.ravel(), n, k, "smallest")
    return SemanticGraph(nodes, adj, "density", k)


def build_rsg(f: Tensor, cfg: GraphConfig) -> SemanticGraph:
    """Nodes are the rows of flattened ``f``; edges join cells with the highest cosine similarity."""
    nodes = fn.flatten_spatial(f)
    n = nodes.shape[0]
    k = _effective_k(cfg.k, n)
    adj = _blocked_adjacency(representation_similarity, nodes.data, n, k, "largest")
    return SemanticGraph(nodes, adj, "representation", k)


def dump_graph(path, graph: SemanticGraph) -> None:
    Path(path).write_text(json.dumps(graph.to_json(), sort_keys=True) + "\n")


def load_graph_json(path) -> dict:
    return json.loads(Path(path).read_text())
