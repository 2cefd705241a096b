"""Strict JSON experiment configuration.

Unknown keys anywhere in the document are rejected so that typos fail
loudly instead of silently falling back to defaults.
"""

import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .evaluate import Region
from .io import SplitSpec, SynthConfig
from .model import PRESETS
from .train import TrainConfig


def _strict(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object, got {type(section).__name__}")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")
    return section


def _names(cls):
    return [f.name for f in fields(cls)]


@dataclass
class PatchConfig:
    size: int = 64
    stride: int = 32

    def __post_init__(self):
        if self.size < 1 or self.stride < 1:
            raise ValueError("patch size and stride must be positive")


@dataclass
class ModelConfig:
    preset: str = "R_small"
    seed: int = 0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")


@dataclass
class EvalConfig:
    regions: list = field(default_factory=list)
    fk_split_hz: float = 50.0


@dataclass
class ExperimentConfig:
    source: str = "synth"
    synth: SynthConfig = field(default_factory=SynthConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def is_synthetic(self):
        return self.source == "synth"


_TRAIN_KEYS = ("learning_rate", "epochs", "batch_size", "seeds")
_SPLIT_KEYS = ("train", "val", "test", "seed")


def _build(cls, values, where):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(doc):
    """Build an :class:`ExperimentConfig` from a decoded JSON document."""
    _strict(doc, ("data", "patch", "split", "model", "train", "eval"), "config")
    data = _strict(doc.get("data", {}), ("source", "synth"), "data")
    source = data.get("source", "synth")
    if not isinstance(source, str) or not source:
        raise ConfigError("data.source must be 'synth' or a path to an .npy file")
    synth = dict(_strict(data.get("synth", {}), _names(SynthConfig), "data.synth"))
    if "dims" in synth:
        synth["dims"] = tuple(synth["dims"])

    train = dict(_strict(doc.get("train", {}), _TRAIN_KEYS, "train"))
    model = _build(ModelConfig, _strict(doc.get("model", {}), _names(ModelConfig), "model"), "model")
    if "seeds" not in train:
        train["seeds"] = (model.seed,)
    ev = dict(_strict(doc.get("eval", {}), _names(EvalConfig), "eval"))
    try:
        ev["regions"] = [Region.from_dict(_strict(r, ("name", "traces", "times"), "eval.regions[]")) for r in ev.get("regions", [])]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ConfigError(f"eval.regions: {exc}") from exc

    return ExperimentConfig(
        source=source,
        synth=_build(SynthConfig, synth, "data.synth"),
        patch=_build(PatchConfig, _strict(doc.get("patch", {}), _names(PatchConfig), "patch"), "patch"),
        split=_build(SplitSpec, _strict(doc.get("split", {}), _SPLIT_KEYS, "split"), "split"),
        model=model,
        train=_build(TrainConfig, train, "train"),
        eval=_build(EvalConfig, ev, "eval"),
    )


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(doc)


def config_to_dict(cfg):
    """Inverse of :func:`parse_config`, for recording the effective configuration."""
    return {
        "data": {"source": cfg.source, "synth": {**{f: getattr(cfg.synth, f) for f in _names(SynthConfig)}, "dims": list(cfg.synth.dims)}},
        "patch": {"size": cfg.patch.size, "stride": cfg.patch.stride},
        "split": {k: getattr(cfg.split, k) for k in _SPLIT_KEYS},
        "model": {"preset": cfg.model.preset, "seed": cfg.model.seed},
        "train": {k: (list(cfg.train.seeds) if k == "seeds" else getattr(cfg.train, k)) for k in _TRAIN_KEYS},
        "eval": {"regions": [r.to_dict() for r in cfg.eval.regions], "fk_split_hz": cfg.eval.fk_split_hz},
    }
