"""Run configuration: nested frozen dataclasses parsed from a JSON document.

The document mirrors the dataclass structure; unknown keys are rejected so
typos fail loudly.  Toggle dependencies are enforced here (curriculum
pretraining presupposes the contrastive objective).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .schema import validate_curriculum


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 2e-4
    lr_end: float = 2e-5
    weight_decay: float = 1e-6
    batch_size: int = 64

    def __post_init__(self):
        if self.lr <= 0.0 or self.lr_end <= 0.0 or self.lr_end > self.lr:
            raise ConfigError("need 0 < lr_end <= lr")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 8          # hard-positive pool size
    n: int = 32         # hard-negative pool size
    m: int = 8          # negatives drawn per anchor
    s: int = 4          # synthetic mixes per anchor
    alpha: float = 0.2  # Beta parameter for feature mixes

    def __post_init__(self):
        if min(self.k, self.n, self.m) < 1 or self.s < 0:
            raise ConfigError("sampler caps must be positive (s may be 0)")
        if self.alpha <= 0.0:
            raise ConfigError("sampler alpha must be > 0")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    input_alpha: float = 0.2
    contrastive_combine: str = "replace"   # mix loss replaces or adds to supcon
    hard_label_weight: float = 0.0

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ConfigError("tau must be > 0")
        if self.input_alpha <= 0.0:
            raise ConfigError("input_alpha must be > 0")
        if self.contrastive_combine not in ("replace", "sum"):
            raise ConfigError("contrastive_combine must be 'replace' or 'sum'")
        if self.hard_label_weight < 0.0:
            raise ConfigError("hard_label_weight must be >= 0")


@dataclass(frozen=True)
class EncoderConfig:
    hidden: tuple = (128,)
    feat_dim: int = 64
    proj_dim: int = 32

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden) or self.feat_dim < 1 or self.proj_dim < 1:
            raise ConfigError("encoder dimensions must be >= 1")


@dataclass(frozen=True)
class PathwayConfig:
    strides: tuple = (4, 5, 6)
    layers: int = 3
    heads: int = 4
    ff_dim: int = 256
    dropout: float = 0.1
    window: int = 32
    batch_size: int = 16
    aux_weight: float = 0.0   # per-pathway BCE added to the fused loss
    train_cuts: int = 2       # evenly offset window cuts of the train episodes

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if not self.strides or min(self.strides) < 1:
            raise ConfigError("strides must be positive")
        if self.window < max(self.strides):
            raise ConfigError(f"window {self.window} shorter than the largest "
                              f"stride {max(self.strides)}")
        if self.batch_size < 1:
            raise ConfigError("pathway batch_size must be >= 1")
        if self.aux_weight < 0.0:
            raise ConfigError("aux_weight must be >= 0")
        if self.train_cuts < 1:
            raise ConfigError("train_cuts must be >= 1")


@dataclass(frozen=True)
class Toggles:
    supcon: bool = True
    curriculum: bool = True
    input_mixup: bool = True
    feature_mixup: bool = True
    gamma_fusion: bool = True
    beta_fusion: bool = True

    def __post_init__(self):
        if self.curriculum and not self.supcon:
            raise ConfigError("curriculum pretraining requires supcon")


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "dataset.trds"
    seeds: tuple = (0,)
    curriculum: tuple = ("T", "IT", "IVT")
    epochs_per_stage: int = 1
    teacher_epochs: int = 8
    student_epochs: int = 12
    temporal_epochs: int = 10
    teacher_from_scratch: bool = False
    optim: OptimConfig = field(default_factory=OptimConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pathway: PathwayConfig = field(default_factory=PathwayConfig)
    toggles: Toggles = field(default_factory=Toggles)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "curriculum", tuple(self.curriculum))
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")
        try:
            validate_curriculum(self.curriculum)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("epochs_per_stage", "teacher_epochs", "student_epochs",
                     "temporal_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


_NESTED = {"optim": OptimConfig, "sampler": SamplerConfig, "loss": LossConfig,
           "encoder": EncoderConfig, "pathway": PathwayConfig, "toggles": Toggles}


def _build(cls, doc: dict, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        if key in _NESTED and cls is RunConfig:
            kwargs[key] = _build(_NESTED[key], value, f"{where}.{key}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def run_config_from_dict(doc: dict) -> RunConfig:
    return _build(RunConfig, doc, "config")


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return run_config_from_dict(doc)


def run_config_to_dict(cfg: RunConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    for key in ("seeds", "curriculum"):
        doc[key] = list(doc[key])
    doc["encoder"]["hidden"] = list(doc["encoder"]["hidden"])
    doc["pathway"]["strides"] = list(doc["pathway"]["strides"])
    return doc


def write_config_lock(cfg: RunConfig, seed: int, path) -> None:
    doc = {"seed": int(seed), "config": run_config_to_dict(cfg)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
