"""Declarative experiment configuration.

Resolution order: built-in defaults < profile < config file < command-line
flags. Unknown keys are rejected everywhere. Environment variables are not
consulted.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .attention import AttentionConfig
from .envgen import config_hash
from .model import ModelConfig
from .planner import BeamConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSection:
    seed: int = 0
    num_states: int = 20
    num_actions: int = 8
    num_tasks: int = 2
    obs_dim: int = 64
    sigma: float = 0.05
    horizons: list = field(default_factory=lambda: [3])
    num_trajectories: int = 500
    train_fraction: float = 0.7
    actions_per_task: int | None = None


@dataclass
class ModelSection:
    latent_dim: int = 32
    encoder_hidden: int = 64
    d_model: int = 32
    heads: int = 4
    layers: int = 2
    attention_kind: str = "causal"
    future_n: int | None = None
    dropout: float = 0.1
    backbone: str = "transformer"
    fc_hidden: int = 128
    seed: int = 0


@dataclass
class TrainingSection:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0


@dataclass
class BeamSection:
    beam_width: int = 2
    n_extensions: int = 3
    goal_weight: float = 0.0


@dataclass
class OutputSection:
    dir: str = "runs/default"


SECTIONS = {
    "dataset": DatasetSection,
    "model": ModelSection,
    "training": TrainingSection,
    "beam": BeamSection,
    "output": OutputSection,
}

PROFILES = {
    "desk": {},
    "large": {"model": {"layers": 8, "heads": 8}, "training": {"batch_size": 256, "epochs": 200}},
}


@dataclass
class ExperimentConfig:
    profile: str = "desk"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    beam: BeamSection = field(default_factory=BeamSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self):
        return asdict(self)

    def hash(self, *sections):
        d = self.to_dict()
        if sections:
            d = {k: d[k] for k in sections}
        return config_hash(d)

    def model_config(self, obs_dim, n_actions):
        m = self.model
        return ModelConfig(
            obs_dim=obs_dim, n_actions=n_actions, latent_dim=m.latent_dim,
            encoder_hidden=m.encoder_hidden,
            attention=AttentionConfig(m.d_model, m.heads, m.layers, m.attention_kind, m.future_n,
                                      m.dropout),
            backbone=m.backbone, fc_hidden=m.fc_hidden, seed=m.seed)

    def train_config(self):
        t = self.training
        return TrainConfig(lr=t.lr, batch_size=t.batch_size, epochs=t.epochs, seed=t.seed)

    def beam_config(self):
        b = self.beam
        return BeamConfig(b.beam_width, b.n_extensions, None, b.goal_weight)

    def dataset_kwargs(self):
        d = asdict(self.dataset)
        d["horizons"] = tuple(d["horizons"])
        return d

    def validate(self):
        try:
            self.model_config(self.dataset.obs_dim, self.dataset.num_actions)
            self.train_config()
            self.beam_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        return self


def _merge_section(section_obj, updates, where):
    valid = {f.name for f in fields(section_obj)}
    for key, value in updates.items():
        if key not in valid:
            raise ConfigError(f"unknown key {where}.{key}")
        setattr(section_obj, key, value)


def apply_updates(cfg: ExperimentConfig, updates: dict, where="config"):
    for key, value in updates.items():
        if key == "profile":
            cfg.profile = value
        elif key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: section {key!r} must be a mapping")
            _merge_section(getattr(cfg, key), value, f"{where}:{key}")
        else:
            raise ConfigError(f"unknown key {where}:{key}")
    return cfg


def load_file(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        if path.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data


def resolve(file_path=None, flag_updates=None, profile=None):
    """Build the effective configuration from defaults, profile, file and flags."""
    file_data = load_file(file_path) if file_path else {}
    flag_updates = flag_updates or {}
    chosen = profile or flag_updates.get("profile") or file_data.get("profile") or "desk"
    if chosen not in PROFILES:
        raise ConfigError(f"unknown profile {chosen!r}")
    cfg = ExperimentConfig(profile=chosen)
    apply_updates(cfg, PROFILES[chosen], "profile")
    apply_updates(cfg, {k: v for k, v in file_data.items() if k != "profile"}, "file")
    apply_updates(cfg, {k: v for k, v in flag_updates.items() if k != "profile"}, "flags")
    cfg.profile = chosen
    return cfg.validate()


def from_dict(d):
    cfg = ExperimentConfig(profile=d.get("profile", "desk"))
    apply_updates(cfg, {k: v for k, v in d.items() if k != "profile"}, "stored")
    return cfg


def flag_specs():
    """``(section, key, default)`` for every configurable field."""
    for name, cls in SECTIONS.items():
        instance = cls()
        for f in fields(cls):
            yield name, f.name, getattr(instance, f.name)
