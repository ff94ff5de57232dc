"""Run configuration, loaded from YAML files that mirror :class:`RunConfig`."""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..encoder import ModelConfig
from ..fusion import FusionConfig
from ..objectives import ContrastiveConfig
from ..synth import SynthSpec

MODES = ("pretrain", "finetune", "eval", "gate-report", "gradcheck", "gen-corpus", "sweep")
TASKS = ("entity-typing", "relation-cls")


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    corpus: str = "data/corpus.jsonl"
    ground_truth: str = "data"
    out: str = "runs/default"
    checkpoint: str = ""


@dataclass
class Masking:
    word_rate: float = 0.15
    entity_rate: float = 0.6


@dataclass
class Optim:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class Finetune:
    task: str = "entity-typing"
    epochs: int = 3
    learning_rate: float = 1e-3
    batch_size: int = 32
    train_fraction: float = 0.7
    freeze_embeddings: bool = False


@dataclass
class Sweep:
    axis: str = "fusion_kind"
    seeds: list[int] = field(default_factory=lambda: [0])


@dataclass
class RunConfig:
    seed: int = 0
    mode: str = "pretrain"
    paths: Paths = field(default_factory=Paths)
    synth: SynthSpec = field(default_factory=SynthSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    masking: Masking = field(default_factory=Masking)
    optim: Optim = field(default_factory=Optim)
    warmup_steps: int = 100
    total_steps: int = 1500
    batch_size: int = 16
    checkpoint_every: int = 0
    log_every: int = 1
    finetune: Finetune = field(default_factory=Finetune)
    sweep: Sweep = field(default_factory=Sweep)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.finetune.task not in TASKS:
            raise ConfigError(f"finetune.task must be one of {TASKS}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError("batch_size must be even")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("step counts must be >= 0")
        self.contrastive.validate()
        self.fusion.validate(self.model.num_layers)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _build(cls, data, where: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls.__name__, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}") if sub else value
    return cls(**kwargs)


_NESTED = {
    ("RunConfig", "paths"): Paths,
    ("RunConfig", "synth"): SynthSpec,
    ("RunConfig", "model"): ModelConfig,
    ("RunConfig", "fusion"): FusionConfig,
    ("RunConfig", "contrastive"): ContrastiveConfig,
    ("RunConfig", "masking"): Masking,
    ("RunConfig", "optim"): Optim,
    ("RunConfig", "finetune"): Finetune,
    ("RunConfig", "sweep"): Sweep,
}


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data or {}, "config")


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(yaml.safe_load(fh))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
