"""Run configuration, its JSON form, and the five ablation settings."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..decoder import DecoderConfig, Objective
from ..losses import LossWeights
from ..matching import CostWeights
from ..partition import build_partition
from .scenes import SceneConfig


@dataclass(frozen=True)
class OptimizerConfig:
    """``kind`` is ``"adam"`` or ``"sgd"``; for Adam, ``momentum`` is the first-moment decay."""

    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 12
    decay_at: float = 0.8
    decay_factor: float = 0.1
    clip_norm: float = 5.0
    beta2: float = 0.999

    def __post_init__(self) -> None:
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * (self.decay_factor if epoch >= int(self.decay_at * self.epochs) else 1.0)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    partition_bounds: tuple[float, ...] = (0.2, 0.4)
    proportions: tuple[float, ...] = (0.65, 0.20, 0.15)
    n_queries: int = 60
    scale_mode: str = "relative"
    use_position: bool = True
    use_preference: bool = True
    eta: float = 0.25
    tau: int = 300
    eval_bounds: tuple[float, ...] = (0.2, 0.4)
    n_train: int = 2000
    n_val: int = 500
    loss_weights: LossWeights = field(default_factory=LossWeights)
    cost_weights: CostWeights = field(default_factory=CostWeights)
    model: DecoderConfig = field(default_factory=DecoderConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self) -> None:
        for name in ("partition_bounds", "proportions", "eval_bounds"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if len(self.proportions) != len(self.partition_bounds) + 1:
            raise ValueError("need one proportion per scale range")
        if self.scale_mode not in ("relative", "absolute"):
            raise ValueError(f"unknown scale_mode {self.scale_mode!r}")
        if self.model.feature_dim != self.scene.feature_dim:
            raise ValueError("model.feature_dim must equal scene.feature_dim")
        if self.model.n_classes != self.scene.n_classes:
            raise ValueError("model.n_classes must equal scene.n_classes")

    @property
    def partition(self):
        return build_partition(self.partition_bounds)

    @property
    def eval_partition(self):
        return build_partition(self.eval_bounds)

    def objective(self) -> Objective:
        return Objective(
            partition=self.partition,
            loss_weights=self.loss_weights,
            cost_weights=self.cost_weights,
            eta=self.eta,
            use_position=self.use_position,
            scale_mode=self.scale_mode,
        )

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        nested = {
            "loss_weights": LossWeights,
            "cost_weights": CostWeights,
            "model": DecoderConfig,
            "optimizer": OptimizerConfig,
            "scene": SceneConfig,
        }
        for key, kind in nested.items():
            if key in data:
                data[key] = kind(**data[key])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def config_hash(self, include_seed: bool = False) -> str:
        data = self.to_dict()
        if not include_seed:
            data.pop("seed")
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


SETTINGS = ("S1", "S2", "S3", "S4", "S5")
SETTING_LABELS = {
    "S1": "baseline",
    "S2": "+ grouping (absolute scales)",
    "S3": "+ grouping (relative scales)",
    "S4": "S3 + position constraint",
    "S5": "S4 + preference extraction",
}


def setting_config(base: RunConfig, setting: str) -> RunConfig:
    """Derive one ablation arm from ``base``; the base supplies bounds and proportions."""
    if setting == "S1":
        return replace(base, partition_bounds=(), proportions=(1.0,), scale_mode="relative",
                       use_position=False, use_preference=False)
    if setting == "S2":
        return replace(base, scale_mode="absolute", use_position=False, use_preference=False)
    if setting == "S3":
        return replace(base, scale_mode="relative", use_position=False, use_preference=False)
    if setting == "S4":
        return replace(base, scale_mode="relative", use_position=True, use_preference=False)
    if setting == "S5":
        return replace(base, scale_mode="relative", use_position=True, use_preference=True)
    raise ValueError(f"unknown setting {setting!r}")
