"""Run configuration: dataclasses, YAML loading and ``key=value`` overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import yaml

from .encoding import DEFAULT_WEEK_ANCHOR


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    ff_dim: int = 128
    latent_dim: int = 32
    window: int = 64
    poi_hidden: int = 64
    poi_layers: int = 1
    n_components: int = 8
    duration_d_model: int = 32
    duration_heads: int = 4
    duration_layers: int = 1
    duration_ff_dim: int = 64
    sigma_floor: float = 1e-3


@dataclass
class TrainingConfig:
    seed: int
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    ae_weight: float = 1.0
    cascade_weight: float = 1.0
    use_arrival: bool = True
    use_poi: bool = True
    use_duration: bool = True
    use_embedding: bool = True
    staged: bool = False
    staged_ae_epochs: int = 5
    week_anchor: int = DEFAULT_WEEK_ANCHOR
    threads: int = 0  # 0 leaves torch's default

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("training.epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("training.learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("training.batch_size must be >= 1")


@dataclass
class GenerateConfig:
    n_agents: int = 200
    weeks_train: int = 4
    weeks_test: int = 2
    anomaly_kind: str = "combined"
    anomaly_fraction: float = 0.05
    meals_per_week: int = 3


@dataclass
class DataConfig:
    train: Optional[str] = None
    test: Optional[str] = None
    agent_labels: Optional[str] = None
    poi_index: Optional[str] = None
    poi_radius_m: float = 15.0


@dataclass
class RunConfig:
    seed: int
    data: DataConfig = field(default_factory=DataConfig)
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: Optional[TrainingConfig] = None

    def __post_init__(self):
        if self.training is None:
            self.training = TrainingConfig(seed=self.seed)
        else:
            self.training.seed = self.seed

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["training"].pop("seed", None)
        return d

    def digest(self) -> str:
        return config_hash(self.to_dict())


_SECTIONS = {
    "data": DataConfig,
    "generate": GenerateConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
}


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _field_types(cls) -> dict[str, Any]:
    return {f.name: f.type for f in dataclasses.fields(cls)}


def _coerce(value: Any, type_name: str, key: str):
    t = str(type_name)
    try:
        if value is None:
            return None
        if "bool" in t:
            if isinstance(value, bool):
                return value
            s = str(value).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if "int" in t:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if "float" in t:
            return float(value)
        return str(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def _parse_scalar(text: str):
    return yaml.safe_load(text) if text.strip() else ""


def config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw or {})
    if "seed" not in raw or raw["seed"] is None:
        raise ConfigError("seed is required (no wall-clock default)")
    seed = _coerce(raw.pop("seed"), "int", "seed")
    sections = {}
    for name, cls in _SECTIONS.items():
        body = raw.pop(name, None) or {}
        if not isinstance(body, dict):
            raise ConfigError(f"section {name} must be a mapping")
        types = _field_types(cls)
        kwargs = {}
        for k, v in body.items():
            if k not in types or (name == "training" and k == "seed"):
                raise ConfigError(f"unknown config key: {name}.{k}")
            kwargs[k] = _coerce(v, types[k], f"{name}.{k}")
        if name == "training":
            kwargs["seed"] = seed
        sections[name] = cls(**kwargs)
    if raw:
        raise ConfigError(f"unknown config key: {sorted(raw)[0]}")
    return RunConfig(seed=seed, **sections)


def apply_overrides(raw: dict, overrides: Iterable[str]) -> dict:
    """Apply ``section.key=value`` (or ``seed=value``) overrides to a raw mapping."""
    raw = json.loads(json.dumps(raw or {}))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if parts == ["seed"]:
            raw["seed"] = _parse_scalar(value)
            continue
        if len(parts) != 2 or parts[0] not in _SECTIONS:
            raise ConfigError(f"unknown config key: {key}")
        section, name = parts
        if name not in _field_types(_SECTIONS[section]) or (section, name) == ("training", "seed"):
            raise ConfigError(f"unknown config key: {key}")
        raw.setdefault(section, {})
        raw[section] = dict(raw[section] or {})
        raw[section][name] = _parse_scalar(value)
    return raw


def load_config(path: Optional[str | Path], overrides: Iterable[str] = ()) -> RunConfig:
    raw = {}
    if path is not None:
        text = Path(path).read_text()
        raw = yaml.safe_load(text) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(apply_overrides(raw, overrides))


def dump_config(cfg: RunConfig) -> str:
    d = cfg.to_dict()
    out = {"seed": cfg.seed}
    out.update(d)
    return yaml.safe_dump(out, sort_keys=False)
