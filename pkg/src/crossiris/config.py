"""Run and scenario configuration with strict JSON loading."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossWeights

SCENARIOS = ("S1_nir2vis", "S2a_joint_sr", "S2b_separate", "S3_vis2nir", "CPGAN", "BASELINE")

# (source spectrum, source resolution) -> (target spectrum, target resolution), generator kind
TRANSLATION_STAGES = {
    "S1_nir2vis": [(("NIR", "HR"), ("VIS", "HR"), "translate")],
    "S3_vis2nir": [(("VIS", "HR"), ("NIR", "HR"), "translate")],
    "S2a_joint_sr": [(("NIR", "LR"), ("VIS", "HR"), "translate_sr")],
    "S2b_separate": [(("NIR", "LR"), ("VIS", "LR"), "translate"),
                     (("VIS", "LR"), ("VIS", "HR"), "translate_sr")],
}


class ConfigError(ValueError):
    pass


def from_dict(cls, data: dict, path: str = ""):
    """Build a (nested) dataclass from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"{path or cls.__name__}: unknown keys {sorted(extra)}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint) and isinstance(value, dict):
            value = from_dict(hint, value, f"{path}{key}.")
        elif typing.get_origin(hint) is tuple and isinstance(value, list):
            value = tuple(value)
        elif _is_optional_tuple(hint) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def _is_optional_tuple(hint) -> bool:
    return any(typing.get_origin(a) is tuple for a in typing.get_args(hint))


def to_dict(obj) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v
    return conv(obj)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class ArchitectureConfig:
    width_multiplier: float = 0.25
    blocks: int = 4
    head_kernel: int = 9
    translate_dropout: float = 0.0
    unet_depth: int = 4
    unet_dropout: float = 0.5
    unet_init: str = "fan_in"
    disc_width_multiplier: float = 0.25
    feature_seed: int = 1234


@dataclass(frozen=True)
class MatchingConfig:
    wavelengths: tuple[float, ...] = (18.0,)
    sigma_on_f: float = 0.5
    bands: int = 8
    max_shift: int = 8


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "S1_nir2vis"
    probe_resolution: str = "HR"
    gallery_resolution: str = "HR"
    seed: int = 0
    steps: int = 400
    epochs: int | None = None  # overrides steps when set
    batch_size: int = 8
    crop: tuple[int, int] | None = (32, 128)  # in HR pixels; None trains on full strips
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    matching: MatchingConfig = field(default_factory=MatchingConfig)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        for r in (self.probe_resolution, self.gallery_resolution):
            if r not in ("HR", "LR"):
                raise ValueError(f"resolution must be HR or LR, got {r!r}")
        if self.scenario in TRANSLATION_STAGES:
            stages = TRANSLATION_STAGES[self.scenario]
            src_res = stages[0][0][1]
            want = ("HR", src_res) if self.scenario != "S3_vis2nir" else ("HR", "HR")
            if (self.probe_resolution, self.gallery_resolution) != want:
                raise ValueError(f"{self.scenario} needs probe/gallery resolutions {want}")
        if self.scenario == "BASELINE" and self.probe_resolution != self.gallery_resolution:
            raise ValueError("baseline matching needs equal probe and gallery resolutions")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batch norm)")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.crop is not None:
            h, w = self.crop
            if h % 16 or w % 16 or not (16 <= h <= 64 and 16 <= w <= 512):
                raise ValueError("crop must be multiples of 16 within 64x512")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return from_dict(cls, d)


@dataclass(frozen=True)
class DatasetConfig:
    manifest: str | None = None
    classes: int = 8
    instances: int = 6
    seed: int = 0
    train_instances: int | None = None
    protocol: str = "instance"
    lr_sigma: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    output_dir: str | None = None

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return from_dict(cls, d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
        return cls.from_dict(data)


def dumps(d: dict) -> str:
    return json.dumps(d, indent=2, sort_keys=True) + "\n"
