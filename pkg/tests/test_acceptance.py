"""Acceptance gate: one test per criterion, each logging a PASS/FAIL line.

Tolerances are pinned here; the two training criteria use the protocol
configurations shared with ``scripts/``.
"""
import dataclasses
import time

import numpy as np
import pytest

from crowdgraph import gradcheck
from crowdgraph.cli import main
from crowdgraph.density import gt_density_map
from crowdgraph.gcn import GcnBranch, GcnConfig, branch_forward
from crowdgraph.graph import (
    GraphConfig, build_dsg, build_rsg, density_similarity, representation_similarity,
)
from crowdgraph.losses import LossConfig, density_loss, point_loss_parts
from crowdgraph.points import Assignment, PointPrediction, linear_assignment
from crowdgraph.tensor import Tensor
from crowdgraph.train import VARIANTS, ablate, ablation_table, train

from oracles import (
    brute_force_assignment_cost, dense_adjacency, dense_gcn, density_loss_loops,
    full_sort_adjacency, point_loss_loops,
)

GRAD_TOL = 1e-5
GRAD_SEEDS = 10
GRAD_BUDGET_S = 120.0
GRAPH_INSTANCES = 1000
GCN_INSTANCES, GCN_TOL = 200, 1e-10
HUNGARIAN_INSTANCES = 100
LOSS_INSTANCES, LOSS_TOL = 100, 1e-10
DENSITY_SETS, DENSITY_TOL = 500, 0.01


def record(log, number, ok, detail):
    log.append(f"[{number}] {'PASS' if ok else 'FAIL'}: {detail}")
    print(log[-1])
    return ok


def test_1_gradient_suite(acceptance_log):
    results, elapsed = gradcheck.timed_suite(gradcheck.CHECKS, range(GRAD_SEEDS))
    ok, lines = gradcheck.summarize(results)
    worst = max(results, key=lambda r: r.max_rel_err)
    modules = {r.module for r in results}
    ok = ok and elapsed < GRAD_BUDGET_S and len(modules) == 6
    detail = (f"gradient suite: {len(gradcheck.CHECKS)} checks x {GRAD_SEEDS} seeds, worst "
              f"{worst.max_rel_err:.2e} ({worst.name}, seed {worst.seed}) < {GRAD_TOL}, {elapsed:.1f}s < {GRAD_BUDGET_S:.0f}s")
    assert record(acceptance_log, 1, ok, detail), "\n".join(lines)


def _random_graph_instance(rng):
    while True:
        h, w = rng.integers(1, 9, size=2)
        if 2 <= h * w <= 64:
            break
    c = int(rng.integers(1, 9))
    f = rng.normal(size=(c, h, w))
    if rng.random() < 0.3:
        f = np.maximum(f, 0)  # ReLU-like features, zero rows possible
    m = rng.random((1, h, w))
    if rng.random() < 0.2:
        m = np.round(m * 4) / 4  # density ties
    k = int(rng.integers(1, 12))
    return f, m, k


def test_2_graph_invariants(acceptance_log):
    rng = np.random.default_rng(2024)
    failures = []
    for t in range(GRAPH_INSTANCES):
        f, m, k = _random_graph_instance(rng)
        cfg = GraphConfig(k=k)
        n = f.shape[1] * f.shape[2]
        dsg, rsg = build_dsg(Tensor(f), m, cfg), build_rsg(Tensor(f), cfg)
        want = min(k, n - 1) + 1
        if dsg.neighbors.shape != (n, want) or rsg.neighbors.shape != (n, want):
            failures.append((t, "row size"))
        if not all(i in row for i, row in enumerate(dsg.neighbors)):
            failures.append((t, "self-loop"))
        # a dyadic shift keeps M + c exact on the quantised grid, so tied distances stay tied
        c = float(np.round(rng.normal() * 160) / 16)
        if not np.array_equal(build_dsg(Tensor(f), m + c, cfg).neighbors, dsg.neighbors):
            failures.append((t, "shift"))
        for alpha in (0.5, 3.0):
            if not np.array_equal(build_rsg(Tensor(alpha * f), cfg).neighbors, rsg.neighbors):
                failures.append((t, f"scale {alpha}"))
        kk = want - 1
        if not np.array_equal(dsg.neighbors, full_sort_adjacency(density_similarity(m.ravel()), kk, "smallest")):
            failures.append((t, "dsg oracle"))
        sim = representation_similarity(f.reshape(f.shape[0], -1).T)
        if not np.array_equal(rsg.neighbors, full_sort_adjacency(sim, kk, "largest")):
            failures.append((t, "rsg oracle"))
    detail = f"graph invariants (rows, shift, scale, full-sort oracle) on {GRAPH_INSTANCES} instances, N <= 64: {len(failures)} violations"
    assert record(acceptance_log, 2, not failures, detail), failures[:10]


def test_3_gcn_dense_oracle(acceptance_log):
    rng = np.random.default_rng(33)
    worst = 0.0
    for t in range(GCN_INSTANCES):
        f, m, k = _random_graph_instance(rng)
        c, h, w = f.shape
        g = build_dsg(Tensor(f), m, GraphConfig(k=k)) if t % 2 else build_rsg(Tensor(f), GraphConfig(k=k))
        branch = GcnBranch(rng, c, GcnConfig(layers=2, final_gain=1.0), "x")
        got = branch_forward(g, branch, h, w).data
        ref = dense_gcn(dense_adjacency(g.neighbors), f.reshape(c, -1).T, [wt.data for wt in branch.weights])
        worst = max(worst, float(np.abs(got - ref.T.reshape(c, h, w)).max()))
    ok = worst <= GCN_TOL
    detail = f"sparse GCN vs dense oracle on {GCN_INSTANCES} graphs, 2 layers: max abs diff {worst:.2e} <= {GCN_TOL}"
    assert record(acceptance_log, 3, ok, detail)


def test_4_hungarian_exact(acceptance_log):
    rng = np.random.default_rng(44)
    mismatches = 0
    for t in range(HUNGARIAN_INSTANCES):
        n = int(rng.integers(0, 8))
        m = int(rng.integers(max(n, 1), 11))
        cost = rng.normal(size=(n, m)) if t % 2 else rng.integers(0, 5, size=(n, m)).astype(float)
        cols = linear_assignment(cost)
        ours = float(cost[np.arange(n)[None, :], cols[None, :]].sum(axis=1)[0]) if n else 0.0
        injective = len(set(cols.tolist())) == n
        if not injective or ours != brute_force_assignment_cost(cost):
            mismatches += 1
    detail = f"Hungarian vs exhaustive injections on {HUNGARIAN_INSTANCES} instances (N_gt <= 7, M_prop <= 10): {mismatches} inexact"
    assert record(acceptance_log, 4, mismatches == 0, detail)


def test_5_loss_oracles(acceptance_log):
    rng = np.random.default_rng(55)
    worst, edge_cases = 0.0, {"no_gt": 0, "saturated": 0}
    for t in range(LOSS_INSTANCES):
        h, w = rng.integers(1, 9, size=2)
        a, b = rng.random((h, w)), rng.random((h, w))
        worst = max(worst, abs(density_loss(Tensor(a[None]), b[None]).item() - density_loss_loops(a, b)))

        m = int(rng.integers(1, 12))
        n_gt = 0 if t % 5 == 0 else int(rng.integers(0, m + 1))
        conf = rng.uniform(0.001, 0.999, size=m)
        if t % 7 == 0:
            conf[rng.random(m) < 0.5] = rng.choice([0.0, 1.0])  # saturated: floors engage
            edge_cases["saturated"] += 1
        edge_cases["no_gt"] += n_gt == 0
        pts = rng.uniform(0, 64, size=(m, 2))
        gt = rng.uniform(0, 64, size=(n_gt, 2))
        match = rng.permutation(m)[:n_gt]
        cfg = LossConfig(lambda1=float(rng.uniform(0, 1)), lambda2=float(rng.uniform(0, 1)))
        pred = PointPrediction(np.zeros((m, 2)), Tensor(pts), Tensor(conf))
        parts = point_loss_parts(pred, gt, Assignment(match, m), cfg)
        total, cls, loc = point_loss_loops(pts, conf, gt, match, cfg.lambda1, cfg.lambda2, cfg.eps_log)
        worst = max(worst, abs(parts.total.item() - total), abs(parts.cls.item() - cls), abs(parts.loc.item() - loc))
    ok = worst <= LOSS_TOL and edge_cases["no_gt"] > 0 and edge_cases["saturated"] > 0
    detail = (f"density + point losses vs loop oracles on {LOSS_INSTANCES} instances "
              f"({edge_cases['no_gt']} all-negative with N_gt=0, {edge_cases['saturated']} saturated): max abs diff {worst:.2e} <= {LOSS_TOL}")
    assert record(acceptance_log, 5, ok, detail)


def test_6_overfit(acceptance_log, tmp_path):
    from crowdgraph.protocols import OVERFIT_BUDGET_S, OVERFIT_DENSITY_REL_ERR, OVERFIT_MAE, overfit_config

    cfg = overfit_config()
    res = train(cfg, progress=print)
    ev = res.train_eval
    dens = ev.density_max_rel_err
    ok = ev.mae <= OVERFIT_MAE and dens < OVERFIT_DENSITY_REL_ERR and res.wall_clock < OVERFIT_BUDGET_S
    detail = (f"overfit 10 scenes at 128x128, full model, K={cfg.graph.k}: train MAE {ev.mae:.3f} <= {OVERFIT_MAE}, "
              f"density sums max rel err {dens:.3f} < {OVERFIT_DENSITY_REL_ERR}, "
              f"{res.epochs_run} epochs, {res.wall_clock:.0f}s < {OVERFIT_BUDGET_S}s")
    assert record(acceptance_log, 6, ok, detail), ev.to_csv()


def test_7_ablation_echo(acceptance_log):
    from crowdgraph.protocols import ablation_config

    rows = ablate(ablation_config(), progress=print)
    print(ablation_table(rows), end="")
    median = {v: float(np.median([r.mae for r in rows if r.variant == v])) for v in VARIANTS}
    params = {r.variant: r.parameters for r in rows}
    base = params["Baseline"]
    branch_share = {"DA": (params["+DP&DA"] - params["+DP"]) / base, "RA": (params["+RA"] - base) / base}
    rows_mse = {v: float(np.median([r.mse for r in rows if r.variant == v])) for v in VARIANTS}
    ok = median["All"] <= median["Baseline"] and all(0 < x < 0.15 for x in branch_share.values())
    detail = (f"ablation over seeds {[0, 1, 2]} on 200 test scenes: median MAE All {median['All']:.3f} <= "
              f"Baseline {median['Baseline']:.3f}; graph branch parameter shares "
              + ", ".join(f"{k} {x:.1%}" for k, x in branch_share.items()) + " < 15%")
    ok = record(acceptance_log, 7, ok, detail)
    for v in VARIANTS:
        acceptance_log.append(f"[7]   {v:9s} median MAE {median[v]:7.3f}  median MSE(RMSE) {rows_mse[v]:7.3f}  parameters {params[v]}")
    assert ok


def test_8_gt_density_conservation(acceptance_log):
    rng = np.random.default_rng(88)
    worst = 0.0
    for _ in range(DENSITY_SETS):
        h, w = 8 * rng.integers(4, 17, size=2)
        n = int(rng.integers(1, 120))
        pts = np.column_stack([rng.uniform(1, w - 1, n), rng.uniform(1, h - 1, n)])
        total = gt_density_map(pts, int(h), int(w), 8, 2.0).sum()
        worst = max(worst, abs(total - n) / n)
    ok = worst < DENSITY_TOL
    detail = f"GT density conservation on {DENSITY_SETS} interior point sets: max |sum - count|/count {worst:.2e} < {DENSITY_TOL}"
    assert record(acceptance_log, 8, ok, detail)


def test_9_determinism(acceptance_log, tmp_path):
    from crowdgraph.protocols import determinism_config

    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(determinism_config().to_json())
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["train", "--config", str(cfg_path), "--out-dir", str(o)]) for o in outs]
    same = {name: (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
            for name in ("checkpoint.bin", "report.json", "train_log.csv")}
    ok = codes == [0, 0] and all(same.values())
    detail = f"two identical train runs: byte-identical {', '.join(k for k, v in same.items() if v) or 'nothing'}"
    assert record(acceptance_log, 9, ok, detail)
