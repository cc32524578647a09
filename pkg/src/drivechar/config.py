"""One declarative JSON config for the whole pipeline.

Every default that comes from the literature lives here: q=7, epsilon=0.45,
gamma=0.55/1.45, p=0.35, hidden=150, horizon=30, dt=0.1, split=0.75.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .clustering import DEFAULT_EPSILON, DEFAULT_Q
from .dataset import DT, HORIZON, CorpusConfig, ExtractionConfig, SquareWaveSpec
from .estimation import GAMMA1, GAMMA2, GaConfig
from .predictor import TrainConfig
from .traffic_model import IdmParams, MobilParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EtsConfig:
    q: float = DEFAULT_Q
    epsilon: float = DEFAULT_EPSILON
    gamma1: float = GAMMA1
    gamma2: float = GAMMA2


@dataclass(frozen=True)
class DataConfig:
    unit_mode: str = "metric"
    dt: float = DT
    horizon: int = HORIZON
    vel_noise: float = 0.0


@dataclass(frozen=True)
class Table1Config:
    n_windows: int = 200
    n_vehicles: int = 10


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    ets: EtsConfig = field(default_factory=EtsConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    extraction_ga: GaConfig = field(default_factory=lambda: GaConfig(population_size=30, generations=25))
    extraction: ExtractionConfig = field(default_factory=lambda: ExtractionConfig(n_lanes=None))
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    square_wave: SquareWaveSpec = field(default_factory=SquareWaveSpec)
    table1: Table1Config = field(default_factory=Table1Config)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return _build(cls, d, "")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(self, seed=int(seed))


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(d).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in d.items():
        tp = hints[name]
        key = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, value, key)
        elif typing.get_origin(tp) is tuple:
            kwargs[name] = tuple(value)
        elif typing.get_origin(tp) is typing.Union:  # Optional[...]
            kwargs[name] = value
        elif tp is float and isinstance(value, int) and not isinstance(value, bool):
            kwargs[name] = float(value)
        else:
            if tp in (int, float, str, bool) and (not isinstance(value, tp) or (tp is int and isinstance(value, bool))):
                raise ConfigError(f"{key}: expected {tp.__name__}, got {value!r}")
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None
