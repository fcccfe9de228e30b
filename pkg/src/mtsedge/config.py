"""Run configuration: strict JSON loading, validation, bundled presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError


def _from_dict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**data)


@dataclass
class NetworkConfig:
    blocks: int = 2                      # reduction blocks in the backbone
    channels: int = 32                   # block output channels (C); inner width is C/2
    reduction: float = 0.4               # spatial area kept by the reducing layer
    windows: tuple = (8, 16, 32, 64)     # tile extents per scale
    terms: int = 3                       # multilinear terms per scale
    heads: int = 4                       # gate heads
    refine_channels: tuple | None = None  # encoder plan; default (C, 2C, 4C)
    balance_scale: float = 1.1           # extra weight on the negative class
    positive_threshold: float = 0.3      # label value from which a pixel is positive

    def __post_init__(self):
        self.windows = tuple(int(w) for w in self.windows)
        if self.refine_channels is not None:
            self.refine_channels = tuple(int(c) for c in self.refine_channels)
        self.validate()

    def validate(self):
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.channels < 2 or self.channels % 2:
            raise ConfigError(f"channels must be even and >= 2, got {self.channels}")
        if not 0 < self.reduction <= 1:
            raise ConfigError(f"reduction must be in (0, 1], got {self.reduction}")
        if not self.windows or len(set(self.windows)) != len(self.windows):
            raise ConfigError(f"windows must be distinct and non-empty: {self.windows}")
        if any(w < 1 for w in self.windows):
            raise ConfigError(f"windows must be positive: {self.windows}")
        if self.terms < 1:
            raise ConfigError(f"terms must be >= 1, got {self.terms}")
        if self.heads < 1 or (self.channels // 2) % self.heads:
            raise ConfigError(
                f"heads ({self.heads}) must divide the inner width ({self.channels // 2})")
        if len(self.refine_plan) != 3:
            raise ConfigError("refine_channels must list exactly 3 extents")
        if self.balance_scale <= 0:
            raise ConfigError("balance_scale must be positive")
        if not 0 < self.positive_threshold <= 1:
            raise ConfigError("positive_threshold must be in (0, 1]")

    @property
    def inner_channels(self):
        return self.channels // 2

    @property
    def refine_plan(self):
        if self.refine_channels is not None:
            return self.refine_channels
        c = self.channels
        return (c, 2 * c, 4 * c)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 0.005
    decay_gamma: float = 0.9
    decay_start: int = 15                # last epoch at the base rate
    seed: int = 7

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 < self.decay_gamma <= 1:
            raise ConfigError("decay_gamma must be in (0, 1]")


@dataclass
class SyntheticSpec:
    count: int = 64
    size: int = 64

    def __post_init__(self):
        if self.count < 0 or self.size < 8:
            raise ConfigError("synthetic spec needs count >= 0 and size >= 8")


@dataclass
class DataConfig:
    root: str | None = None
    synthetic: SyntheticSpec | None = None


@dataclass
class EvalConfig:
    setting: str = "thin"
    tolerance: float = 0.0075

    def __post_init__(self):
        if self.setting not in ("thin", "raw"):
            raise ConfigError(f"eval setting must be 'thin' or 'raw', got {self.setting!r}")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    reference: dict | None = None        # optional published figures, never asserted

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(data) - {"network", "train", "data", "eval", "reference"}
        if unknown:
            raise ConfigError(f"config: unknown sections {sorted(unknown)}")
        net = _from_dict(NetworkConfig, data.get("network", {}), "network")
        train = _from_dict(TrainConfig, data.get("train", {}), "train")
        dsec = dict(data.get("data", {}))
        synth = dsec.pop("synthetic", None)
        dc = _from_dict(DataConfig, dsec, "data")
        if synth is not None:
            dc.synthetic = _from_dict(SyntheticSpec, synth, "data.synthetic")
        ev = _from_dict(EvalConfig, data.get("eval", {}), "eval")
        ref = data.get("reference")
        if ref is not None and not isinstance(ref, dict):
            raise ConfigError("reference section must be an object")
        return cls(network=net, train=train, data=dc, eval=ev, reference=ref)

    def to_dict(self):
        def plain(obj):
            if dataclasses.is_dataclass(obj):
                return {f.name: plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, tuple):
                return list(obj)
            return obj

        out = {
            "network": plain(self.network),
            "train": plain(self.train),
            "data": plain(self.data),
            "eval": plain(self.eval),
        }
        if self.reference is not None:
            out["reference"] = self.reference
        return out


PRESET_NAMES = ("mts-dr-1", "mts-dr-2", "mts-dr-3", "mts-dr-4")


def load_config(spec):
    """Load a RunConfig from a JSON file path or a bundled preset name."""
    name = str(spec)
    if name in PRESET_NAMES:
        text = resources.files("mtsedge").joinpath(f"presets/{name}.json").read_text()
    else:
        path = Path(name)
        if not path.is_file():
            raise ConfigError(f"config not found: {name} "
                              f"(not a file and not one of {', '.join(PRESET_NAMES)})")
        text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {name}: {e}") from e
    return RunConfig.from_dict(data)
