"""Experiment configuration: nested dataclasses parsed strictly from YAML/JSON."""

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .losses import LossWeights
from .model import ModelConfig
from .scene import GridSpec, RenderConfig, RigConfig, SceneConfig

SCHEDULES = ("random", "fixed", "simultaneous")
_SCHEDULE_ALIASES = {"randomselection": "random", "fixedalternative": "fixed"}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class DataConfig:
    scenes: int = 4
    frames_per_scene: int = 50
    test_fraction: float = 0.2
    label_rate: float = 10.0
    seed: int = 0
    grid: GridSpec = field(default_factory=GridSpec)
    scene: SceneConfig = field(default_factory=SceneConfig)
    rig: RigConfig = field(default_factory=RigConfig)
    render: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self):
        if self.scenes < 1 or self.frames_per_scene < 1:
            raise ValueError("need at least one scene and one frame per scene")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must lie in [0, 1)")
        if not 0 < self.label_rate <= 100:
            raise ValueError("label_rate must lie in (0, 100]")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "mvpr"
    schedule: str = "random"
    label_rate: float | None = None  # None: use the dataset's labeled flags
    warmup_epochs: int = 5
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    split_seed: int = 0
    init_seed: int = 0
    schedule_seed: int = 0
    probe_size: int = 16
    eval_every: int = 1
    checkpoint_every: int = 1

    def __post_init__(self):
        from .losses import normalize_mode

        object.__setattr__(self, "mode", normalize_mode(self.mode))
        sched = str(self.schedule).lower()
        sched = _SCHEDULE_ALIASES.get(sched, sched)
        if sched not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        object.__setattr__(self, "schedule", sched)
        if self.warmup_epochs > self.epochs:
            raise ValueError("warmup_epochs must not exceed epochs")
        if self.warmup_epochs < 0 or self.epochs < 1:
            raise ValueError("epochs must be positive and warmup_epochs nonnegative")
        if self.batch_size != 1:
            raise ValueError("only batch_size 1 is supported")
        if self.label_rate is not None and not 0 < self.label_rate <= 100:
            raise ValueError("label_rate must lie in (0, 100]")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")


@dataclass(frozen=True)
class EvalConfig:
    splits: tuple = ("test",)


@dataclass(frozen=True)
class ReportConfig:
    out_dir: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self):
        if self.model.num_views != self.data.rig.num_views:
            raise ValueError(f"model.num_views ({self.model.num_views}) must equal "
                             f"data.rig.num_views ({self.data.rig.num_views})")
        self.train.weights.resolve(self.model.num_views)

    def hash(self):
        return config_hash(self)


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def config_hash(obj):
    blob = json.dumps(to_dict(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def from_dict(cls, data, path=""):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown config key '{path}{key}'")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = from_dict(hint, value, f"{path}{key}.")
        else:
            kwargs[key] = _tupleize(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path.rstrip('.') or 'config'}: {exc}") from None


def load_config(path=None):
    """Parse an experiment config file (YAML or JSON); ``None`` gives defaults."""
    if path is None:
        return ExperimentConfig()
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return from_dict(ExperimentConfig, raw)


def dump_config(cfg):
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def replace_path(cfg, dotted, value):
    """Copy of ``cfg`` with the field at ``dotted`` (e.g. ``train.weights.beta``) replaced."""
    head, _, rest = dotted.partition(".")
    if not rest:
        return dataclasses.replace(cfg, **{head: value})
    return dataclasses.replace(cfg, **{head: replace_path(getattr(cfg, head), rest, value)})
