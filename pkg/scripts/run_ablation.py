#!/usr/bin/env python3
"""Five-variant ablation on the pinned benchmark; writes ablation.csv and config.json."""
import argparse
import logging
from pathlib import Path

import numpy as np

from crowdgraph.protocols import ablation_config
from crowdgraph.train import VARIANTS, ablate, ablation_table


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/ablation")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ablation_config(args.seeds)
    rows = ablate(cfg, progress=logging.info)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    (out / "ablation.csv").write_text(ablation_table(rows))
    for v in VARIANTS:
        sel = [r for r in rows if r.variant == v]
        print(f"{v:9s} median MAE {np.median([r.mae for r in sel]):7.3f} "
              f"median MSE {np.median([r.mse for r in sel]):7.3f} parameters {sel[0].parameters}")


if __name__ == "__main__":
    main()
