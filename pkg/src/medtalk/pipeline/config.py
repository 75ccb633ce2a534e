"""Run configuration: dataclass defaults < YAML file < MEDTALK_* env vars < CLI overrides."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..disentangle import Stage1Schedule
from ..errors import ConfigError
from ..fim import FIMWeights
from ..nets import StageSchedule
from ..rigcore import ControllerSets
from ..synthdata import SynthSpec

ENV_PREFIX = "MEDTALK_"


@dataclass
class Stage1Config:
    epochs_self: int = 50
    epochs_overlap: int = 50
    epochs_cycle: int = 50
    learning_rate: float = 1e-4
    decay_rate: float = 0.995
    step_size: int = 10
    batch_size: int = 8
    content_weight_decay: float = 0.0

    def schedule(self, phases) -> Stage1Schedule:
        return Stage1Schedule(**asdict(self), phases=tuple(phases))


@dataclass
class StageConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    decay_rate: float = 0.9
    step_size: int = 10
    batch_size: int = 8

    def schedule(self) -> StageSchedule:
        return StageSchedule(**asdict(self))


@dataclass
class LossWeights:
    lambda_sim: float = 0.1
    lambda_int: float = 0.1
    lambda_direct: float = 0.0

    def fim(self) -> FIMWeights:
        return FIMWeights(self.lambda_sim, self.lambda_int, self.lambda_direct)


@dataclass
class ModelConfig:
    content_dim: int = 64
    emotion_dim: int = 64
    hidden: int = 128
    acm_hidden: int = 256
    cmf_hidden: int = 64
    fuse_hidden: int = 128
    head_hidden: int = 128


@dataclass
class DataConfig:
    """Where the corpus comes from: a dataset directory, or the generator."""

    directory: str | None = None
    n_contents: int = 64
    seq_len: int = 120
    dims: int = 174
    fps: int = 30
    content_dim: int = 8
    emotion_gain: float = 1.0
    leak: float = 0.05
    audio_dim: int = 32
    text_dim: int = 16
    feature_noise: float = 0.05
    test_fraction: float = 0.2
    guidance_width: int = 32
    guidance_noise: float = 0.1

    def synth_spec(self, seed, sets: ControllerSets | None = None) -> SynthSpec:
        names = {f.name for f in fields(SynthSpec)}
        kw = {k: v for k, v in asdict(self).items() if k in names}
        return SynthSpec(seed=seed, sets=sets, **kw)


@dataclass
class AblationFlags:
    no_overlap: bool = False
    no_cycle: bool = False
    no_disentangle: bool = False
    no_intensity: bool = False
    no_text: bool = False

    def active(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name)]

    def phases(self):
        return tuple(p for p, off in (("self", False), ("overlap", self.no_overlap), ("cycle", self.no_cycle))
                     if not off)


@dataclass
class RunConfig:
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    threads: int = 1
    stage1: Stage1Config = field(default_factory=Stage1Config)
    acm: StageConfig = field(default_factory=StageConfig)
    fim: StageConfig = field(default_factory=StageConfig)
    guidance: StageConfig = field(default_factory=StageConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    controller_sets: dict | None = None

    def sets(self) -> ControllerSets:
        if self.controller_sets is None:
            return ControllerSets.default(self.data.dims)
        return ControllerSets.from_mapping(self.controller_sets).validate(self.data.dims)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _build(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"config section '{path or 'root'}' must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(path + k for k in unknown)}")
    kw = {}
    for name, value in data.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kw[name] = _build(type(default), value, f"{path}{name}.")
        else:
            kw[name] = _coerce(value, default, path + name)
    return cls(**kw)


def _coerce(value, default, key):
    if default is None or value is None:
        return value
    kind = type(default)
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if kind in (int, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if kind is int and float(value) != int(value):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return kind(value)
    if kind is str and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _set_path(tree: dict, dotted: str, raw: str):
    node = tree
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {p} is not a section")
    node[parts[-1]] = yaml.safe_load(raw) if isinstance(raw, str) else raw


def env_overrides(environ=None) -> dict:
    """MEDTALK_STAGE1__EPOCHS_SELF=5 -> {"stage1": {"epochs_self": 5}}."""
    environ = os.environ if environ is None else environ
    tree: dict = {}
    for key, raw in sorted(environ.items()):
        if key.startswith(ENV_PREFIX) and len(key) > len(ENV_PREFIX):
            _set_path(tree, key[len(ENV_PREFIX):].lower().replace("__", "."), raw)
    return tree


def load_config(path=None, overrides=(), environ=None) -> RunConfig:
    """Layered load. ``overrides`` are ``section.key=value`` strings (YAML-typed values)."""
    tree = RunConfig().to_dict()
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        tree = _merge(tree, doc)
    tree = _merge(tree, env_overrides(environ))
    cli: dict = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        _set_path(cli, k.strip(), v)
    tree = _merge(tree, cli)
    cfg = _build(RunConfig, tree)
    cfg.sets()  # validate indices early
    return cfg
