"""Run configuration: one JSON file covering every module's settings."""

import json
from dataclasses import asdict, dataclass, field, fields

from .causal_stream import CausalBlockConfig
from .embedding_loss import LossConfig
from .geometry import PhotometricConfig

EMBEDDING_DIM = 8
SEQUENCE_LENGTH = 5


@dataclass(frozen=True)
class TrackerConfig:
    life_span: int = SEQUENCE_LENGTH
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)
    causal: CausalBlockConfig = field(default_factory=CausalBlockConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)

    def to_dict(self):
        return asdict(self)


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def config_from_dict(d):
    """Build a :class:`RunConfig`; unknown sections or keys raise ``ValueError``."""
    unknown = set(d) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    parts = {}
    for name, factory in _SECTIONS.items():
        section = d.get(name, {})
        if not isinstance(section, dict):
            raise ValueError(f"config section {name!r} must be an object")
        cls = type(factory())
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ValueError(f"unknown keys in {name!r}: {sorted(bad)}")
        parts[name] = cls(**section)
    return RunConfig(**parts)


def load_config(path=None):
    if path is None:
        return RunConfig()
    with open(path) as f:
        return config_from_dict(json.load(f))
