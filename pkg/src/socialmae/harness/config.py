"""Experiment configuration documents (JSON) and their validation."""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..errors import ConfigError
from ..mae import ModelConfig
from ..scene import SynthConfig

TASKS = ("pretrain", "forecast", "group", "action")
ABLATION_AXES = ("mask_ratio", "dec_layers", "data_fraction")


@dataclass
class DataSource:
    """Either a dataset directory (``path``) or in-memory synthesis parameters (``synth``)."""

    path: str | None = None
    synth: SynthConfig | None = None
    num_scenes: int = 8
    seed: int | None = None
    fraction: float = 1.0

    def __post_init__(self):
        if (self.path is None) == (self.synth is None):
            raise ConfigError("a data source needs exactly one of 'path' or 'synth'")
        if self.num_scenes < 1:
            raise ConfigError("num_scenes must be >= 1")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError("fraction must lie in (0, 1]")


@dataclass
class LossWeights:
    forecast_layers: list[float] | None = None
    group: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])
    action: list[float] = field(default_factory=lambda: [1.0, 1.0])

    def as_dict(self) -> dict:
        return {"forecast_layers": self.forecast_layers, "group": tuple(self.group), "action": tuple(self.action)}


@dataclass
class AblateConfig:
    axis: str
    values: list

    def __post_init__(self):
        if self.axis not in ABLATION_AXES:
            raise ConfigError(f"ablation axis must be one of {ABLATION_AXES}, got {self.axis!r}")
        if not self.values:
            raise ConfigError("ablation needs at least one value")


@dataclass
class ExperimentConfig:
    task: str
    seed: int
    model: ModelConfig = field(default_factory=ModelConfig)
    train_data: DataSource | None = None
    eval_data: DataSource | None = None
    pretrain_data: DataSource | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    out_dir: str = "runs/default"
    history_frames: int = 15
    horizon: int = 14
    batch_size: int = 8
    eval_every: int = 0
    checkpoint_every: int = 1
    iou_threshold: float = 1.0
    group_count_sweep: bool = True
    num_pose: int = 10
    num_interactions: int = 14
    metric_scale: float = 1.0
    mpjpe_frames: list[int] | None = None
    init_checkpoint: str | None = None
    checkpoint: str | None = None
    ablate: AblateConfig | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if self.history_frames != self.model.num_frames:
            raise ConfigError(
                f"history_frames ({self.history_frames}) must equal model.num_frames ({self.model.num_frames})"
            )
        if self.horizon < 1 or self.batch_size < 1:
            raise ConfigError("horizon and batch_size must be >= 1")
        if self.eval_every < 0 or self.checkpoint_every < 0:
            raise ConfigError("eval_every and checkpoint_every must be >= 0")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ConfigError("iou_threshold must lie in (0, 1]")
        if self.weights.forecast_layers is not None and len(self.weights.forecast_layers) != self.model.enc_layers:
            raise ConfigError("weights.forecast_layers needs one weight per encoder layer")
        if len(self.weights.group) != 3 or len(self.weights.action) != 2:
            raise ConfigError("weights.group needs 3 values and weights.action 2 values")

    @property
    def finetune_task(self) -> str:
        if self.task == "pretrain":
            raise ConfigError("this command needs a fine-tuning task (forecast, group or action)")
        return self.task

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return _to_jsonable(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _to_jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def _strip_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _build(cls, doc: Any, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"'{where}' must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown keys in '{where}': {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        tp = _strip_optional(hints[name])
        if value is not None and dataclasses.is_dataclass(tp):
            value = _build(tp, value, f"{where}.{name}" if where else name)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid '{where or 'config'}': {exc}") from None


def config_from_dict(doc: dict) -> ExperimentConfig:
    if "seed" not in doc:
        raise ConfigError("config must set 'seed'")
    if "task" not in doc:
        raise ConfigError("config must set 'task'")
    return _build(ExperimentConfig, doc, "")


def load_config(path: str | Path) -> tuple[ExperimentConfig, str]:
    """Parse a JSON config file; returns the config and the verbatim file text."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return config_from_dict(doc), text
