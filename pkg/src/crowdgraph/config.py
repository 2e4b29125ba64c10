"""Experiment configuration: nested dataclasses <-> strict JSON."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .backbone import BackboneConfig
from .density import DensityHeadConfig
from .errors import ConfigError
from .gcn import GcnConfig
from .graph import GraphConfig
from .losses import LossConfig
from .model import ModelConfig, Switches
from .points import PointHeadConfig
from .synth import AugmentConfig, SceneConfig


@dataclass
class OptimConfig:
    lr: float = 1e-4
    backbone_lr: float = 1e-5
    batch_size: int = 8  # logical batch, realised by gradient accumulation


@dataclass
class TrainConfig:
    epochs: int = 20
    n_train: int = 10
    n_test: int = 50
    eval_every: int = 0  # epochs between train-split evaluations; 0 = only at the end
    stop_at_train_mae: Optional[float] = None
    # with stop_at_train_mae, also require every training density sum within this relative error
    stop_at_density_rel_err: Optional[float] = None
    # from this epoch on, batch-norm layers normalise with their running statistics
    # while training (frozen BN); None keeps per-image statistics throughout
    bn_freeze_epoch: Optional[int] = None


@dataclass
class AblateConfig:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])


@dataclass
class SweepConfig:
    k_values: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16])


@dataclass
class ExperimentConfig:
    seed: int = 0
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    density_head: DensityHeadConfig = field(default_factory=DensityHeadConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    gcn: GcnConfig = field(default_factory=GcnConfig)
    point_head: PointHeadConfig = field(default_factory=PointHeadConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    ablation: Switches = field(default_factory=Switches)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.backbone, self.density_head, self.graph, self.gcn, self.point_head, self.ablation)

    def train_map_nodes(self) -> int:
        """Graph node count N for the maps seen during training."""
        s = self.backbone.stride
        h, w = self.augment.crop if self.augment.enabled else self.scene.size
        return (-(-h // s)) * (-(-w // s))

    def validate(self) -> "ExperimentConfig":
        for block in (self.backbone, self.density_head, self.graph, self.gcn, self.point_head, self.loss, self.scene):
            block.validate()
        self.augment.validate(self.scene)
        self.ablation.validate()
        n = self.train_map_nodes()
        if self.graph.k >= n:
            raise ConfigError(f"graph.k: K={self.graph.k} must be < N={n} graph nodes")
        for k in self.sweep.k_values:
            if not 1 <= k < n:
                raise ConfigError(f"sweep.k_values: K={k} must satisfy 1 <= K < N={n}")
        if self.optim.lr < 0 or self.optim.backbone_lr < 0:
            raise ConfigError("optim.lr / optim.backbone_lr: must be >= 0")
        if self.optim.batch_size < 1:
            raise ConfigError("optim.batch_size: must be >= 1")
        if self.train.epochs < 1 or self.train.n_train < 1 or self.train.n_test < 1:
            raise ConfigError("train.epochs / n_train / n_test: must be >= 1")
        if self.train.bn_freeze_epoch is not None and self.train.bn_freeze_epoch < 1:
            raise ConfigError("train.bn_freeze_epoch: must be >= 1 or null")
        if self.train.eval_every < 0:
            raise ConfigError("train.eval_every: must be >= 0")
        if not self.ablate.seeds:
            raise ConfigError("ablate.seeds: must be nonempty")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _coerce(value: Any, tp: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
        return _from_dict(tp, value, path)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        return [_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _from_dict(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + u for u in unknown)}")
    kwargs = {}
    for name in names & set(data):
        kwargs[name] = _coerce(data[name], hints[name], f"{path}.{name}" if path else name)
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _from_dict(ExperimentConfig, data).validate()


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data)
