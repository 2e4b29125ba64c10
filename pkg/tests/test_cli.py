import csv
import io
import json

import numpy as np
import pytest

from crowdgraph import functional as fn
from crowdgraph import gradcheck
from crowdgraph.cli import main
from crowdgraph.density import read_density_csv, read_pgm
from crowdgraph.graph import density_similarity, load_graph_json
from crowdgraph.synth import mae_mse
from crowdgraph.tensor import make_op
from crowdgraph.train import build_model, save_model

from oracles import full_sort_adjacency
from tiny import tiny_config


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(tiny_config().to_json())
    return p


@pytest.fixture
def run_dir(tmp_path, cfg_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--out-dir", str(out)]) == 0
    return out


def test_config_init_roundtrip(tmp_path, capsys):
    assert main(["config", "init"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["graph"]["k"] == 4
    assert main(["config", "init", "--out", str(tmp_path / "c.json")]) == 0
    assert json.loads((tmp_path / "c.json").read_text()) == doc


def test_train_outputs(run_dir):
    names = {p.name for p in run_dir.iterdir()}
    assert {"checkpoint.bin", "train_log.csv", "report.json", "timing.json", "config.json"} <= names
    report = json.loads((run_dir / "report.json").read_text())
    assert all(np.isfinite(h["joint"]) for h in report["history"])


def test_train_byte_identical(tmp_path, cfg_path, run_dir):
    out2 = tmp_path / "run2"
    assert main(["train", "--config", str(cfg_path), "--out-dir", str(out2)]) == 0
    for name in ("checkpoint.bin", "report.json", "train_log.csv", "config.json"):
        assert (run_dir / name).read_bytes() == (out2 / name).read_bytes(), name


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"graph": {"kk": 1}}))
    assert main(["train", "--config", str(bad), "--out-dir", str(tmp_path / "x")]) == 2
    assert "graph.kk" in capsys.readouterr().err


def test_eval_and_metric_recomputation(tmp_path, cfg_path, run_dir):
    out = tmp_path / "ev"
    cfg = tiny_config()
    cfg.train.n_test = 50
    cfg_path.write_text(cfg.to_json())
    save_model(run_dir / "ck50.bin", build_model(cfg), cfg)
    assert main(["eval", "--checkpoint", str(run_dir / "ck50.bin"), "--split", "test", "--out-dir", str(out)]) == 0
    metrics = json.loads((out / "metrics_test.json").read_text())
    rows = list(csv.DictReader(io.StringIO((out / "counts_test.csv").read_text())))
    assert len(rows) == 50 == metrics["images"]
    mae, mse = mae_mse([int(r["pred_count"]) for r in rows], [int(r["gt_count"]) for r in rows])
    assert (mae, mse) == (metrics["MAE"], metrics["MSE(RMSE)"])
    # untrained zero-init heads: every proposal counted
    assert {int(r["pred_count"]) for r in rows} == {64}
    first = (out / "metrics_test.json").read_bytes()
    assert main(["eval", "--checkpoint", str(run_dir / "ck50.bin"), "--split", "test", "--out-dir", str(out)]) == 0
    assert (out / "metrics_test.json").read_bytes() == first


def test_eval_hash_mismatch_exit_3(tmp_path, run_dir):
    other = tmp_path / "other.json"
    other.write_text(tiny_config(seed=9).to_json())
    code = main(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"), "--config", str(other),
                 "--out-dir", str(tmp_path / "e")])
    assert code == 3
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.bin"), "--out-dir", str(tmp_path / "e")]) == 3


def test_graph_dump(tmp_path, run_dir):
    a, b = tmp_path / "d1", tmp_path / "d2"
    for d in (a, b):
        assert main(["graph-dump", "--checkpoint", str(run_dir / "checkpoint.bin"), "--seed", "4", "--out-dir", str(d)]) == 0
    for name in ("dsg.json", "rsg.json", "density.pgm", "density.csv", "points.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    dsg, rsg = load_graph_json(a / "dsg.json"), load_graph_json(a / "rsg.json")
    k = tiny_config().graph.k
    assert all(len(row) == k + 1 for row in dsg["neighbors"] + rsg["neighbors"])
    assert dsg["N"] == 16 and dsg["kind"] == "density"
    m = read_density_csv(a / "density.csv")
    assert read_pgm(a / "density.pgm").shape == m.shape
    np.testing.assert_array_equal(dsg["neighbors"], full_sort_adjacency(density_similarity(m.ravel()), k, "smallest"))


def test_gradcheck_command_passes(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    modules = {"tensor-autodiff", "backbone-fpn", "density-head", "gcn", "point-head", "losses"}
    assert all(f"[{m}]" in out for m in modules)


def test_gradcheck_catches_corrupted_backward(monkeypatch, capsys):
    def bad_upsample(x, factor):
        out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

        def backward(g):  # forgets to sum the replicas
            return (g[:, ::factor, ::factor],)

        return make_op(out, (x,), backward, "upsample_nearest")

    monkeypatch.setattr(fn, "upsample_nearest", bad_upsample)
    check = next(c for c in gradcheck.CHECKS if c.name == "upsample_nearest")
    ok, lines = gradcheck.summarize(gradcheck.run_checks([check], seeds=range(2)))
    assert not ok and lines[0].startswith("FAIL upsample_nearest") and "seed" in lines[0]
    monkeypatch.setattr(gradcheck, "CHECKS", [check])
    assert main(["gradcheck", "--seeds", "2"]) == 1
    assert "FAIL upsample_nearest" in capsys.readouterr().out


def test_ablate_and_sweep_commands(tmp_path, cfg_path, capsys):
    cfg = tiny_config()
    cfg.ablate.seeds = [0]
    cfg_path.write_text(cfg.to_json())
    assert main(["ablate", "--config", str(cfg_path), "--out-dir", str(tmp_path / "ab")]) == 0
    rows = (tmp_path / "ab" / "ablation.csv").read_text().splitlines()
    assert len(rows) == 1 + 5 + 5
    assert main(["sweep-k", "--config", str(cfg_path), "--k", "1", "2", "3", "--out-dir", str(tmp_path / "sw")]) == 0
    assert len((tmp_path / "sw" / "sweep_k.csv").read_text().splitlines()) == 4
    assert main(["sweep-k", "--config", str(cfg_path), "--k", "16", "--out-dir", str(tmp_path / "sw")]) == 2
