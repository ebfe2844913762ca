"""Run configuration: one JSON document aggregating every module's settings."""

import dataclasses
import json
from dataclasses import dataclass, field

from .detector import ScoreConfig
from .dsp import CHANNEL_IDS, StftConfig, WindowPlan
from .gan import TrainConfig
from .synth import SynthConfig


@dataclass
class WindowConfig:
    window_len: int = 2000
    # streaming hop for detection; None means window_len // 2
    stream_hop: int = None

    def training_plan(self):
        return WindowPlan(self.window_len, mode="training")

    def streaming_plan(self):
        return WindowPlan(self.window_len, self.stream_hop, mode="streaming")


@dataclass
class ModelConfig:
    latent_dim: int = 16
    base_channels: int = 16
    feature_layer: int = 1


@dataclass
class RunConfig:
    seed: int = 0
    sample_rate_hz: float = 100.0
    channels: tuple = CHANNEL_IDS
    window: WindowConfig = field(default_factory=WindowConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    threshold_percentile: float = 99.0
    mask_percentile: float = 98.0
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if isinstance(self.channels, str):
            self.channels = self.channels.split(",")
        self.channels = tuple(c.strip().upper() for c in self.channels)
        if not self.channels or set(self.channels) - set(CHANNEL_IDS) or \
                len(set(self.channels)) != len(self.channels):
            raise ValueError(f"channels must be a non-empty subset of {CHANNEL_IDS}, got {self.channels}")
        if not 0.0 < self.threshold_percentile <= 100.0:
            raise ValueError("threshold_percentile must lie in (0, 100]")
        if not 0.0 < self.mask_percentile < 100.0:
            raise ValueError("mask_percentile must lie in (0, 100)")
        # validate the plans eagerly
        self.window.training_plan()
        self.window.streaming_plan()

    def with_seed(self, seed):
        """Copy with ``seed`` propagated to every seeded section."""
        return replace(self, {"seed": seed, "train.seed": seed, "score.seed": seed, "synth.seed": seed})

    def image_shape(self):
        return (len(self.channels), self.stft.out_height, self.stft.out_width)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_SECTIONS = {"window": WindowConfig, "stft": StftConfig, "model": ModelConfig,
             "train": TrainConfig, "score": ScoreConfig, "synth": SynthConfig}


def from_dict(d):
    d = dict(d)
    unknown = set(d) - {f.name for f in dataclasses.fields(RunConfig)}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for name, cls in _SECTIONS.items():
        if name in d:
            sub = dict(d[name])
            bad = set(sub) - {f.name for f in dataclasses.fields(cls)}
            if bad:
                raise ValueError(f"unknown keys in '{name}': {sorted(bad)}")
            d[name] = cls(**sub)
    return RunConfig(**d)


def load(path):
    with open(path) as fh:
        return from_dict(json.load(fh))


def flat_keys(cfg=None):
    """All settable dotted keys, e.g. ``train.epochs``."""
    cfg = cfg or RunConfig()
    keys = []
    for f in dataclasses.fields(cfg):
        val = getattr(cfg, f.name)
        if dataclasses.is_dataclass(val):
            keys.extend(f"{f.name}.{g.name}" for g in dataclasses.fields(val))
        else:
            keys.append(f.name)
    return keys


def resolve_key(key):
    """Map ``key`` (dotted, or a unique leaf name) to its dotted form."""
    key = key.replace("-", "_")
    keys = flat_keys()
    if key in keys:
        return key
    matches = [k for k in keys if k.split(".")[-1] == key]
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise KeyError(f"unknown config key {key!r}")
    raise KeyError(f"ambiguous config key {key!r}: use one of {matches}")


def _coerce(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if "," in text:
            return [t.strip() for t in text.split(",")]
        return text


def replace(cfg, overrides):
    """New config with ``{dotted_key: value}`` overrides; strings are JSON-decoded."""
    d = cfg.to_dict()
    for key, value in overrides.items():
        key = resolve_key(key)
        if isinstance(value, str):
            value = _coerce(value)
        if "." in key:
            section, leaf = key.split(".", 1)
            d[section][leaf] = value
        else:
            d[key] = value
    return from_dict(d)
