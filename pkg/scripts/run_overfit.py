#!/usr/bin/env python3
"""Overfit the full model on ten scenes and write the usual train outputs."""
import argparse
import logging
from pathlib import Path

from crowdgraph.protocols import OVERFIT_DENSITY_REL_ERR, OVERFIT_MAE, overfit_config
from crowdgraph.train import train, write_train_outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/overfit")
    ap.add_argument("--epochs", type=int, help="cap on epochs (protocol: 800, early stop)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = overfit_config()
    if args.epochs:
        cfg.train.epochs = args.epochs
    res = train(cfg, progress=logging.info)
    out = Path(args.out_dir)
    write_train_outputs(out, cfg, res)
    (out / "counts_train.csv").write_text(res.train_eval.to_csv())
    ev = res.train_eval
    print(f"epochs={res.epochs_run} wall={res.wall_clock:.0f}s train MAE={ev.mae:.3f} (target {OVERFIT_MAE}) "
          f"density max rel err={ev.density_max_rel_err:.3f} (target {OVERFIT_DENSITY_REL_ERR})")


if __name__ == "__main__":
    main()
