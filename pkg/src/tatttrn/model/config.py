from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path


@dataclass
class ModelConfig:
    """Hyperparameters for the network, losses and optimiser.

    ``lam`` weights the reconstruction term in the total loss (serialized as
    ``lambda``). ``decay`` is applied per epoch as a learning-rate factor when
    ``decay_mode == "lr"`` or passed to Adam as weight decay when
    ``decay_mode == "weight"``. ``cycle_target`` picks the target of the
    image-reconstruction BCE: the input image ("image") or the template
    broadcast over RGB ("template").
    """

    C: int
    K: int = 512
    m: float = 0.5
    s: float = 64.0
    lam: float = 4.0
    input_side: int = 224
    backbone_spec: str = "small"
    unet_width: int = 16
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-5
    decay: float = 0.95
    decay_mode: str = "lr"
    cycle_target: str = "image"
    jitter_brightness: float = 0.2
    jitter_contrast: float = 0.2
    jitter_saturation: float = 0.2
    jitter_hue: float = 0.05
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.C < 1:
            raise ValueError("C must be >= 1")
        if self.K <= 0:
            raise ValueError("K must be positive")
        if not 0.0 <= self.m < math.pi:
            raise ValueError("margin m must lie in [0, pi)")
        if self.s <= 0:
            raise ValueError("scale s must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.input_side % 8 or self.input_side < 16:
            raise ValueError("input_side must be a multiple of 8 and >= 16")
        if self.decay_mode not in ("lr", "weight"):
            raise ValueError(f"unknown decay_mode {self.decay_mode!r}")
        if self.cycle_target not in ("image", "template"):
            raise ValueError(f"unknown cycle_target {self.cycle_target!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        by_lower = {f.name.lower(): f.name for f in fields(cls)}
        by_lower["lambda"] = "lam"
        d = {by_lower.get(k.lower(), k): v for k, v in d.items()}
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(cls, k, v) for k, v in d.items()})

    @classmethod
    def from_ini(cls, path: str | Path, section: str = "model", **overrides) -> "ModelConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        values = dict(parser[section]) if parser.has_section(section) else {}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    def compatible_with(self, other: "ModelConfig") -> bool:
        return (self.K, self.C, self.input_side) == (other.K, other.C, other.input_side)


def _coerce(cls, key, value):
    default = {f.name: f for f in fields(cls)}[key]
    kind = default.type if isinstance(default.type, str) else default.type.__name__
    if isinstance(value, str):
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    return value
