#!/usr/bin/env python3
"""Neighbour-count sweep on the ablation benchmark (one seed); writes sweep_k.csv."""
import argparse
import dataclasses
import logging
from pathlib import Path

from crowdgraph.protocols import sweep_config
from crowdgraph.train import sweep_csv, sweep_k


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/sweep_k")
    ap.add_argument("--k", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = dataclasses.replace(sweep_config(args.k), seed=args.seed)
    table = sweep_csv(sweep_k(cfg, cfg.sweep.k_values, progress=logging.info))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    (out / "sweep_k.csv").write_text(table)
    print(table, end="")


if __name__ == "__main__":
    main()
