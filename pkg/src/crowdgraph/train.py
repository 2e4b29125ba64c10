"""Training loop, evaluation, ablation matrix and K sweep."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .backbone import pad_to_multiple
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_from_dict
from .errors import CheckpointError
from .model import CrowdCounter
from .optim import Adam, ParamGroup
from .points import count_from_points
from .synth import Scene, augment, generate_scene, mae_mse, split_seeds
from .tensor import Tensor

log = logging.getLogger(__name__)

VARIANTS = {
    "Baseline": dict(use_dp=False, use_da=False, use_ra=False),
    "+DP": dict(use_dp=True, use_da=False, use_ra=False),
    "+DP&DA": dict(use_dp=True, use_da=True, use_ra=False),
    "+RA": dict(use_dp=False, use_da=False, use_ra=True),
    "All": dict(use_dp=True, use_da=True, use_ra=True),
}


def build_model(cfg: ExperimentConfig) -> CrowdCounter:
    return CrowdCounter(cfg.model_config(), cfg.seed)


def load_split(cfg: ExperimentConfig, split: str, n: Optional[int] = None) -> list[Scene]:
    if n is None:
        n = cfg.train.n_train if split == "train" else cfg.train.n_test
    return [generate_scene(cfg.scene, s) for s in split_seeds(cfg.seed, split, n)]


def image_tensor(scene: Scene, stride: int) -> Tensor:
    return Tensor(pad_to_multiple(scene.image, stride))


@dataclass
class EvalResult:
    pred_counts: list[int]
    gt_counts: list[int]
    density_sums: list[Optional[float]]
    seeds: list[int]

    @property
    def mae(self) -> float:
        return mae_mse(self.pred_counts, self.gt_counts)[0]

    @property
    def mse(self) -> float:
        return mae_mse(self.pred_counts, self.gt_counts)[1]

    @property
    def density_max_rel_err(self) -> Optional[float]:
        """Largest ``|sum(M) - count| / count`` over images with people; None without a density head."""
        pairs = [(d, g) for d, g in zip(self.density_sums, self.gt_counts) if d is not None and g > 0]
        if not pairs:
            return None
        return max(abs(d - g) / g for d, g in pairs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "gt_count", "pred_count", "density_sum"])
        for s, g, p, d in zip(self.seeds, self.gt_counts, self.pred_counts, self.density_sums):
            w.writerow([s, g, p, "" if d is None else repr(d)])
        return buf.getvalue()


def evaluate(model: CrowdCounter, scenes: Sequence[Scene], threshold: float) -> EvalResult:
    """Eval-mode BN, no augmentation, counts from thresholded confidences."""
    was_training = model.training
    model.eval()
    preds, gts, dens, seeds = [], [], [], []
    for scene in scenes:
        out = model(image_tensor(scene, model.stride))
        preds.append(count_from_points(out.pred, threshold)[0])
        gts.append(scene.count)
        dens.append(None if out.density is None else float(out.density.data.sum()))
        seeds.append(scene.seed)
    model.train(was_training)
    return EvalResult(preds, gts, dens, seeds)


@dataclass
class EpochLog:
    epoch: int
    density: float
    cls: float
    loc: float
    joint: float


@dataclass
class TrainResult:
    model: CrowdCounter
    history: list[EpochLog]
    train_eval: EvalResult
    test_eval: Optional[EvalResult]
    epochs_run: int
    wall_clock: float
    report: dict = field(default_factory=dict)


def make_optimizer(model: CrowdCounter, cfg: ExperimentConfig) -> Adam:
    backbone, rest = [], []
    for name, p in model.active_parameters():
        (backbone if name.startswith("backbone.") else rest).append(p)
    return Adam([ParamGroup(backbone, cfg.optim.backbone_lr), ParamGroup(rest, cfg.optim.lr)])


def train(
    cfg: ExperimentConfig,
    train_scenes: Optional[list[Scene]] = None,
    test_scenes: Optional[list[Scene]] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    started = time.perf_counter()
    cfg.validate()
    model = build_model(cfg).train()
    opt = make_optimizer(model, cfg)
    params = [p for _, p in model.active_parameters()]
    rng = np.random.default_rng([cfg.seed, 7919])
    scenes = train_scenes if train_scenes is not None else load_split(cfg, "train")
    s = model.stride
    bs = cfg.optim.batch_size
    threshold = cfg.point_head.threshold
    history: list[EpochLog] = []
    train_eval: Optional[EvalResult] = None
    epochs_run = 0

    freeze = cfg.train.bn_freeze_epoch
    for epoch in range(1, cfg.train.epochs + 1):
        model.train(freeze is None or epoch < freeze)
        order = rng.permutation(len(scenes))
        sums = np.zeros(4)
        for start in range(0, len(order), bs):
            batch = order[start : start + bs]
            for idx in batch:
                scene = scenes[idx]
                if cfg.augment.enabled:
                    scene = augment(scene, rng, cfg.augment)
                img = image_tensor(scene, s)
                out = model(img)
                parts = model.loss(out, scene.points, img.shape[1:], cfg.loss)
                (parts.joint * (1.0 / len(batch))).backward()
                sums += (parts.density, parts.cls, parts.loc, parts.joint.item())
            for p in params:
                # e.g. an empty crop leaves the regression head out of the graph: its gradient is zero
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            opt.step()
            opt.zero_grad()
        mean = sums / len(order)
        history.append(EpochLog(epoch, *mean.tolist()))
        epochs_run = epoch

        last = epoch == cfg.train.epochs
        due = cfg.train.eval_every and epoch % cfg.train.eval_every == 0
        if last or due:
            train_eval = evaluate(model, scenes, threshold)
            if progress:
                dens = train_eval.density_max_rel_err
                extra = "" if dens is None else f" density max rel err={dens:.3f}"
                progress(f"epoch {epoch}: joint={mean[3]:.4f} train MAE={train_eval.mae:.3f}{extra}")
            if _should_stop(cfg, train_eval):
                break

    if train_eval is None:
        train_eval = evaluate(model, scenes, threshold)
    test_eval = evaluate(model, test_scenes if test_scenes is not None else load_split(cfg, "test"), threshold)
    wall = time.perf_counter() - started
    result = TrainResult(model, history, train_eval, test_eval, epochs_run, wall)
    result.report = run_report(cfg, result)
    return result


def _should_stop(cfg: ExperimentConfig, ev: EvalResult) -> bool:
    mae_target, dens_target = cfg.train.stop_at_train_mae, cfg.train.stop_at_density_rel_err
    if mae_target is None or ev.mae > mae_target:
        return False
    if dens_target is None:
        return True
    err = ev.density_max_rel_err
    return err is None or err < dens_target


def run_report(cfg: ExperimentConfig, result: TrainResult) -> dict:
    """Everything here is a deterministic function of (config, seed); wall-clock lives elsewhere."""
    te = result.test_eval
    return {
        "config_hash": cfg.hash(),
        "epochs_run": result.epochs_run,
        "parameters": result.model.count_parameters(),
        "history": [dataclasses.asdict(h) for h in result.history],
        "train": {"MAE": result.train_eval.mae, "MSE(RMSE)": result.train_eval.mse},
        "test": None if te is None else {"MAE": te.mae, "MSE(RMSE)": te.mse},
    }


def history_csv(history: Sequence[EpochLog]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "L_density", "L_cls", "L_loc", "L_joint"])
    for h in history:
        w.writerow([h.epoch, repr(h.density), repr(h.cls), repr(h.loc), repr(h.joint)])
    return buf.getvalue()


def save_model(path, model: CrowdCounter, cfg: ExperimentConfig) -> None:
    meta = {"config": cfg.to_dict(), "config_hash": cfg.hash()}
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path, cfg: Optional[ExperimentConfig] = None) -> tuple[CrowdCounter, ExperimentConfig]:
    arrays, meta = load_checkpoint(path)
    if "config" not in meta:
        raise CheckpointError(f"{path}: no embedded configuration")
    stored = config_from_dict(meta["config"])
    if cfg is not None and cfg.hash() != meta.get("config_hash"):
        raise CheckpointError(
            f"config hash {cfg.hash()} does not match checkpoint hash {meta.get('config_hash')}"
        )
    cfg = cfg or stored
    model = build_model(cfg)
    try:
        model.load_state_dict(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return model.eval(), cfg


def write_train_outputs(out_dir, cfg: ExperimentConfig, result: TrainResult) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "checkpoint.bin", result.model, cfg)
    (out / "train_log.csv").write_text(history_csv(result.history))
    (out / "report.json").write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"wall_clock_seconds": result.wall_clock}) + "\n")
    (out / "config.json").write_text(cfg.to_json())


def variant_config(cfg: ExperimentConfig, variant: str, seed: int) -> ExperimentConfig:
    return dataclasses.replace(
        cfg, seed=seed, ablation=dataclasses.replace(cfg.ablation, **VARIANTS[variant])
    ).validate()


@dataclass
class AblationRow:
    variant: str
    seed: int
    mae: float
    mse: float
    parameters: int


def ablate(
    cfg: ExperimentConfig,
    variants: Sequence[str] = tuple(VARIANTS),
    progress: Optional[Callable[[str], None]] = None,
) -> list[AblationRow]:
    """Train and test every variant for every seed; the benchmark split is shared per seed."""
    rows = []
    for seed in cfg.ablate.seeds:
        base = dataclasses.replace(cfg, seed=seed)
        train_scenes = load_split(base, "train")
        test_scenes = load_split(base, "test")
        for name in variants:
            vcfg = variant_config(cfg, name, seed)
            res = train(vcfg, train_scenes, test_scenes)
            rows.append(AblationRow(name, seed, res.test_eval.mae, res.test_eval.mse, res.model.count_parameters()))
            if progress:
                progress(f"seed {seed} {name}: MAE={rows[-1].mae:.3f} MSE={rows[-1].mse:.3f}")
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "seed", "MAE", "MSE(RMSE)", "parameters"])
    for r in rows:
        w.writerow([r.variant, r.seed, repr(r.mae), repr(r.mse), r.parameters])
    for name in dict.fromkeys(r.variant for r in rows):
        sel = [r for r in rows if r.variant == name]
        w.writerow([name, "median", repr(float(np.median([r.mae for r in sel]))),
                    repr(float(np.median([r.mse for r in sel]))), sel[0].parameters])
    return buf.getvalue()


def sweep_k(
    cfg: ExperimentConfig, k_values: Sequence[int], progress: Optional[Callable[[str], None]] = None
) -> list[tuple[int, float, float]]:
    rows = []
    train_scenes = load_split(cfg, "train")
    test_scenes = load_split(cfg, "test")
    for k in k_values:
        kcfg = dataclasses.replace(cfg, graph=dataclasses.replace(cfg.graph, k=k)).validate()
        res = train(kcfg, train_scenes, test_scenes)
        rows.append((k, res.test_eval.mae, res.test_eval.mse))
        if progress:
            progress(f"K={k}: MAE={rows[-1][1]:.3f} MSE={rows[-1][2]:.3f}")
    return rows


def sweep_csv(rows: Sequence[tuple[int, float, float]]) -> str:
    lines = ["K,MAE,MSE(RMSE)"] + [f"{k},{mae!r},{mse!r}" for k, mae, mse in rows]
    return "\n".join(lines) + "\n"
