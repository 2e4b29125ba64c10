"""Command-line driver.

Exit codes: 0 success, 2 configuration error, 3 checkpoint error, 1 anything else.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import gradcheck
from .config import ExperimentConfig, load_config
from .density import write_density_csv, write_pgm
from .errors import CheckpointError, ConfigError
from .graph import dump_graph
from .points import count_from_points, write_points_csv
from .synth import generate_scene, write_points, write_ppm
from .train import (
    ablate, ablation_table, evaluate, image_tensor, load_model, load_split,
    sweep_csv, sweep_k, train, write_train_outputs,
)

log = logging.getLogger("crowdgraph")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg.validate()


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _config(args)
    res = train(cfg, progress=log.info)
    write_train_outputs(_out(args), cfg, res)
    print(f"train MAE={res.train_eval.mae:.4f} test MAE={res.test_eval.mae:.4f} "
          f"MSE(RMSE)={res.test_eval.mse:.4f} config_hash={cfg.hash()}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else None
    model, cfg = load_model(args.checkpoint, cfg)
    res = evaluate(model, load_split(cfg, args.split), cfg.point_head.threshold)
    out = _out(args)
    metrics = {"split": args.split, "images": len(res.seeds), "MAE": res.mae, "MSE(RMSE)": res.mse,
               "config_hash": cfg.hash()}
    (out / f"metrics_{args.split}.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    (out / f"counts_{args.split}.csv").write_text(res.to_csv())
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    rows = ablate(cfg, progress=log.info)
    table = ablation_table(rows)
    (_out(args) / "ablation.csv").write_text(table)
    print(table, end="")
    return 0


def cmd_sweep_k(args) -> int:
    cfg = _config(args)
    if args.k:
        cfg = dataclasses.replace(cfg, sweep=dataclasses.replace(cfg.sweep, k_values=args.k)).validate()
    table = sweep_csv(sweep_k(cfg, cfg.sweep.k_values, progress=log.info))
    (_out(args) / "sweep_k.csv").write_text(table)
    print(table, end="")
    return 0


def cmd_gradcheck(args) -> int:
    seeds = range(args.seeds)
    results, elapsed = gradcheck.timed_suite(gradcheck.CHECKS, seeds)
    ok, lines = gradcheck.summarize(results)
    for line in lines:
        print(line)
    print(f"{'ALL PASS' if ok else 'FAILURES'} in {elapsed:.1f}s")
    return 0 if ok else 1


def cmd_graph_dump(args) -> int:
    cfg = load_config(args.config) if args.config else None
    model, cfg = load_model(args.checkpoint, cfg)
    if not (cfg.ablation.use_dp and cfg.ablation.use_da and cfg.ablation.use_ra):
        raise ConfigError("graph-dump needs a checkpoint with all three ablation switches on")
    scene = generate_scene(cfg.scene, args.scene_seed)
    out_dir = _out(args)
    img = image_tensor(scene, model.stride)
    out = model(img)
    dump_graph(out_dir / "dsg.json", out.graphs["density"])
    dump_graph(out_dir / "rsg.json", out.graphs["representation"])
    density = out.density.data[0]
    write_pgm(out_dir / "density.pgm", density)
    write_density_csv(out_dir / "density.csv", density)
    write_points_csv(out_dir / "points.csv", out.pred, cfg.point_head.threshold)
    write_ppm(out_dir / "scene.ppm", scene.image)
    write_points(out_dir / "scene_points.csv", scene.points)
    n, _ = count_from_points(out.pred, cfg.point_head.threshold)
    print(f"scene {args.scene_seed}: gt={scene.count} predicted={n} density_sum={density.sum():.3f}")
    return 0


def cmd_config_init(args) -> int:
    text = ExperimentConfig().to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdgraph", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, out="runs/latest"):
        sp.add_argument("--config", help="experiment JSON (defaults if omitted)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out-dir", default=out)

    sp = sub.add_parser("train", help="train and write checkpoint, log and report")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(sp, seed=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("train", "test"), default="test")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train the five switch variants over the ablation seeds")
    common(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("sweep-k", help="train and evaluate one model per neighbour count")
    common(sp)
    sp.add_argument("--k", type=int, nargs="+", help="override sweep.k_values")
    sp.set_defaults(func=cmd_sweep_k)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--seeds", type=int, default=len(gradcheck.DEFAULT_SEEDS))
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("graph-dump", help="dump graphs, density map and points for one scene")
    common(sp, seed=False, out="runs/graph_dump")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--scene-seed", "--seed", dest="scene_seed", type=int, default=0)
    sp.set_defaults(func=cmd_graph_dump)

    sp = sub.add_parser("config", help="configuration helpers")
    csub = sp.add_subparsers(dest="config_command", required=True)
    init = csub.add_parser("init", help="print the default configuration")
    init.add_argument("--out", help="write to this file instead of stdout")
    init.set_defaults(func=cmd_config_init)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to exit code 1
        log.debug("internal error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
