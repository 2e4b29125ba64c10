"""Central finite-difference checks for every differentiable op and the end-to-end loss.

Each check builds a scalar ``loss(*tensors)`` from a seed.  Non-scalar outputs
are contracted with a fixed random tensor so every output element carries a
generic O(1) weight.  The error reported is norm-wise:
``max|analytic - numeric| / max(max|numeric|, max|analytic|)`` over the probed entries.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import functional as fn
from .backbone import PAFPN, Backbone, BackboneConfig
from .density import DensityHead, DensityHeadConfig
from .gcn import GcnBranch, GcnConfig, branch_forward, gcn_layer, normalize_adjacency
from .graph import GraphConfig, build_dsg, build_rsg
from .losses import LossConfig, density_loss, point_loss
from .model import CrowdCounter, ModelConfig, Switches
from .points import PointHead, PointHeadConfig, hungarian_match
from .tensor import Tensor, matmul

FD_EPS = 1e-6
TOLERANCE = 1e-5
DEFAULT_SEEDS = tuple(range(10))

Builder = Callable[[int], tuple[Callable[..., Tensor], list[Tensor]]]


@dataclass
class Check:
    name: str
    module: str
    build: Builder
    max_probes: Optional[int] = None  # entries probed per input; None = all


@dataclass
class CheckResult:
    name: str
    module: str
    seed: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def contract(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Reduce ``out`` to a scalar with random weights."""
    if out.size == 1:
        return out.reshape(())
    return (out * rng.normal(size=out.shape)).sum()


def gradient_error(
    loss: Callable[..., Tensor], inputs: Sequence[Tensor], rng: np.random.Generator,
    max_probes: Optional[int] = None, eps: float = FD_EPS,
) -> float:
    for t in inputs:
        t.grad = None
    loss(*inputs).backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    worst_diff, scale = 0.0, 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_probes is not None and flat.size > max_probes:
            idx = np.sort(rng.choice(flat.size, size=max_probes, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss(*inputs).item()
            flat[i] = orig - eps
            fm = loss(*inputs).item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            a = ga.reshape(-1)[i]
            worst_diff = max(worst_diff, abs(a - num))
            scale = max(scale, abs(a), abs(num))
    return worst_diff / scale if scale > 0 else worst_diff


def _leaf(rng, *shape, low=None):
    data = rng.normal(size=shape) if low is None else rng.uniform(low, 1.0, size=shape)
    return Tensor(data, requires_grad=True)


# -- op-level builders ------------------------------------------------------


def _elementwise(seed):
    rng = np.random.default_rng(seed)
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    c = _leaf(rng, 3, 4, low=0.5)
    r = np.random.default_rng(seed + 1000)
    w = r.normal(size=(4, 3))
    return lambda a, b, c: contract(((a * b - b / c + c**1.5 - 2.0) * a).permute(1, 0).reshape(2, 6).mean(axis=0) + (a.sum(axis=1) * 0.5).sum() + (a @ Tensor(w)).sum(), np.random.default_rng(seed + 1)), [a, b, c]


def _matmul(seed):
    rng = np.random.default_rng(seed)
    a, b = _leaf(rng, 5, 4), _leaf(rng, 4, 3)
    return lambda a, b: contract(matmul(a, b), np.random.default_rng(seed + 1)), [a, b]


def _conv(stride, pad, kernel):
    def build(seed):
        rng = np.random.default_rng(seed)
        size = 6 if stride == 1 else 7
        x, k, bias = _leaf(rng, 2, size, size), _leaf(rng, 3, 2, kernel, kernel), _leaf(rng, 3)
        return lambda x, k, b: contract(fn.conv2d(x, k, b, stride=stride, pad=pad), np.random.default_rng(seed + 1)), [x, k, bias]

    return build


def _batchnorm(training):
    def build(seed):
        rng = np.random.default_rng(seed)
        x, g, b = _leaf(rng, 3, 4, 5), _leaf(rng, 3), _leaf(rng, 3)
        state = fn.BatchNormState(3)
        state.running_mean = rng.normal(size=3)
        state.running_var = rng.uniform(0.5, 2.0, size=3)
        return lambda x, g, b: contract(fn.batchnorm2d(x, g, b, state, training), np.random.default_rng(seed + 1)), [x, g, b]

    return build


def _unary(op):
    def build(seed):
        rng = np.random.default_rng(seed)
        x = _leaf(rng, 3, 4, 4)
        return lambda x: contract(op(x), np.random.default_rng(seed + 1)), [x]

    return build


def _log(seed):
    rng = np.random.default_rng(seed)
    x = _leaf(rng, 10, low=0.05)
    return lambda x: contract(fn.log(x, 1e-12), np.random.default_rng(seed + 1)), [x]


def _neighbor_aggregate(seed):
    rng = np.random.default_rng(seed)
    n, k = 9, 3
    neigh = np.stack([np.sort(np.append(rng.choice(np.delete(np.arange(n), i), k, replace=False), i)) for i in range(n)])
    vals = rng.uniform(0.1, 1.0, size=neigh.shape)
    h = _leaf(rng, n, 4)
    return lambda h: contract(fn.neighbor_aggregate(neigh, vals, h), np.random.default_rng(seed + 1)), [h]


def _gather(seed):
    rng = np.random.default_rng(seed)
    x = _leaf(rng, 6, 2)
    idx = rng.integers(0, 6, size=8)
    return lambda x: contract(fn.gather_rows(x, idx), np.random.default_rng(seed + 1)), [x]


# -- module-level builders --------------------------------------------------

_TINY_BACKBONE = dict(channels=[3, 4, 5], convs_per_stage=1, fused_channels=4)


def _fusion(seed):
    rng = np.random.default_rng(seed)
    cfg = BackboneConfig(**_TINY_BACKBONE)
    bb, neck = Backbone(rng, cfg), PAFPN(rng, cfg)
    img = _leaf(rng, 3, 32, 32)
    lat, down = neck.lateral[0].weight, neck.down[1].weight

    def loss(img, lat, down):
        return contract(neck(*bb(img)), np.random.default_rng(seed + 1))

    return loss, [img, lat, down]


def _density_head(seed):
    rng = np.random.default_rng(seed)
    head = DensityHead(rng, 8, DensityHeadConfig(blocks=2, hidden=6))
    x = _leaf(rng, 8, 4, 4)
    w = head.blocks[0].conv.weight
    return lambda x, w: contract(head(x), np.random.default_rng(seed + 1)), [x, w]


def _random_graph_nodes(rng, h, w, c):
    return _leaf(rng, c, h, w)


def _gcn_layer(seed):
    rng = np.random.default_rng(seed)
    f = _leaf(rng, 5, 3, 3)
    g = build_rsg(f, GraphConfig(k=3))
    adj = normalize_adjacency(g.neighbors)
    h, w = _leaf(rng, 9, 5), _leaf(rng, 5, 4)
    return lambda h, w: contract(gcn_layer(h, adj, w), np.random.default_rng(seed + 1)), [h, w]


def _branch(seed):
    rng = np.random.default_rng(seed)
    f = _leaf(rng, 6, 4, 4)
    m = rng.normal(size=(1, 4, 4))
    graph = build_dsg(f, m, GraphConfig(k=4))
    branch = GcnBranch(rng, 6, GcnConfig(layers=2, final_gain=1.0), "density")
    w0, w1 = branch.weights

    def loss(f, w0, w1):
        g = type(graph)(fn.flatten_spatial(f), graph.neighbors, graph.kind, graph.k)
        return contract(branch_forward(g, branch, 4, 4), np.random.default_rng(seed + 1))

    return loss, [f, w0, w1]


def _point_heads(seed):
    rng = np.random.default_rng(seed)
    head = PointHead(rng, 8, 8, PointHeadConfig(hidden=6))
    # zero-initialised output layers would hide the upstream gradient
    for sub in (head.regression, head.classification):
        sub.out.weight.data[:] = rng.normal(scale=0.3, size=sub.out.weight.shape)
    x = _leaf(rng, 8, 4, 4)

    def loss(x, wr, wc):
        p = head(x)
        r = np.random.default_rng(seed + 1)
        return contract(p.points, r) + contract(p.confidence, r)

    return loss, [x, head.regression.out.weight, head.classification.conv1.weight]


def _density_loss(seed):
    rng = np.random.default_rng(seed)
    m = _leaf(rng, 1, 5, 5)
    target = rng.uniform(0, 0.2, size=(1, 5, 5))
    return lambda m: density_loss(m, target), [m]


def _point_loss(seed):
    from .points import PointPrediction

    rng = np.random.default_rng(seed)
    n_prop, n_gt = 12, 4
    anchors = rng.uniform(0, 32, size=(n_prop, 2))
    offsets = _leaf(rng, n_prop, 2)
    logits = _leaf(rng, n_prop)
    gt = rng.uniform(0, 32, size=(n_gt, 2))
    cfg = LossConfig(lambda1=0.05)
    assignment = hungarian_match(PointPrediction(anchors, offsets, fn.sigmoid(logits)), gt, 0.4)

    def loss(offsets, logits):
        return point_loss(PointPrediction(anchors, offsets, fn.sigmoid(logits), logits), gt, assignment, cfg)

    return loss, [offsets, logits]


def tiny_model_config(**switches) -> ModelConfig:
    return ModelConfig(
        BackboneConfig(**_TINY_BACKBONE),
        DensityHeadConfig(blocks=1, hidden=4),
        GraphConfig(k=4),
        GcnConfig(layers=2, final_gain=1.0),
        PointHeadConfig(hidden=4),
        Switches(**switches),
    )


def _end_to_end(seed):
    rng = np.random.default_rng(seed)
    model = CrowdCounter(tiny_model_config(), seed)
    for sub in (model.head.regression, model.head.classification):
        sub.out.weight.data[:] = rng.normal(scale=0.3, size=sub.out.weight.shape)
    img = _leaf(rng, 3, 32, 32)
    pts = rng.uniform(1, 31, size=(5, 2))
    loss_cfg = LossConfig(lambda1=0.01)
    ref = model(img)
    graphs = ref.graphs
    assignment = model.loss(ref, pts, (32, 32), loss_cfg).assignment
    params = [
        model.backbone.stages[0].convs[0].conv.weight,
        model.density.blocks[0].conv.weight,
        model.gcn_density.weights[0],
        model.gcn_representation.weights[1],
        model.head.classification.conv1.weight,
    ]

    def loss(img, *ps):
        out = model(img, graphs=graphs)
        return model.loss(out, pts, (32, 32), loss_cfg, assignment=assignment).joint

    return loss, [img, *params]


CHECKS: list[Check] = [
    Check("elementwise+reduce+reshape", "tensor-autodiff", _elementwise),
    Check("matmul", "tensor-autodiff", _matmul),
    Check("conv2d[3x3,s1,p1]", "tensor-autodiff", _conv(1, 1, 3)),
    Check("conv2d[3x3,s2,p1]", "tensor-autodiff", _conv(2, 1, 3)),
    Check("conv2d[1x1]", "tensor-autodiff", _conv(1, 0, 1)),
    Check("batchnorm2d[train]", "tensor-autodiff", _batchnorm(True)),
    Check("batchnorm2d[eval]", "tensor-autodiff", _batchnorm(False)),
    Check("relu", "tensor-autodiff", _unary(fn.relu)),
    Check("sigmoid", "tensor-autodiff", _unary(fn.sigmoid)),
    Check("log", "tensor-autodiff", _log),
    Check("log_sigmoid", "tensor-autodiff", _unary(lambda x: fn.log_sigmoid(x * 4.0, 1e-12))),
    Check("maxpool2x2", "tensor-autodiff", _unary(fn.maxpool2x2)),
    Check("upsample_nearest", "tensor-autodiff", _unary(lambda x: fn.upsample_nearest(x, 2))),
    Check("pad2d", "tensor-autodiff", _unary(lambda x: fn.pad2d(x, 0, 1, 2, 1))),
    Check("neighbor_aggregate", "tensor-autodiff", _neighbor_aggregate),
    Check("gather_rows", "tensor-autodiff", _gather),
    Check("backbone+pafpn", "backbone-fpn", _fusion, max_probes=40),
    Check("density_head", "density-head", _density_head, max_probes=60),
    Check("gcn_layer", "gcn", _gcn_layer),
    Check("branch_forward", "gcn", _branch),
    Check("point_heads", "point-head", _point_heads, max_probes=60),
    Check("density_loss", "losses", _density_loss),
    Check("point_loss", "losses", _point_loss),
    Check("joint_loss[end-to-end]", "losses", _end_to_end, max_probes=25),
]


def run_checks(
    checks: Sequence[Check] = CHECKS, seeds: Sequence[int] = DEFAULT_SEEDS,
    progress: Optional[Callable[[CheckResult], None]] = None,
) -> list[CheckResult]:
    results = []
    for check in checks:
        for seed in seeds:
            loss, inputs = check.build(seed)
            err = gradient_error(loss, inputs, np.random.default_rng(seed + 77), check.max_probes)
            res = CheckResult(check.name, check.module, seed, err)
            results.append(res)
            if progress:
                progress(res)
    return results


def summarize(results: Sequence[CheckResult]) -> tuple[bool, list[str]]:
    lines = []
    by_name: dict[str, list[CheckResult]] = {}
    for r in results:
        by_name.setdefault(r.name, []).append(r)
    ok = True
    for name, rs in by_name.items():
        worst = max(rs, key=lambda r: r.max_rel_err)
        passed = all(r.passed for r in rs)
        ok &= passed
        lines.append(
            f"{'PASS' if passed else 'FAIL'} {name} [{rs[0].module}] seeds={len(rs)} "
            f"max_rel_err={worst.max_rel_err:.3e} (seed {worst.seed})"
        )
    return ok, lines


def timed_suite(checks: Sequence[Check] = CHECKS, seeds: Sequence[int] = DEFAULT_SEEDS):
    t0 = time.perf_counter()
    results = run_checks(checks, seeds)
    return results, time.perf_counter() - t0
