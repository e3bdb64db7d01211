"""Single-file run configuration shared by every command."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .bench import EnvSpec, make_env
from .model import EncoderConfig, ScorerConfig
from .training import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "from_dict"]


class ConfigError(ValueError):
    pass


@dataclass
class EnvSection:
    name: str = "pointreach2d"
    horizon: int = 20
    gamma: float = 0.99
    noise_std: float = 0.05
    step_scale: float = 0.1
    action_bound: float = 1.0
    init_range: float = 1.0

    def build(self) -> EnvSpec:
        kw = dataclasses.asdict(self)
        return make_env(kw.pop("name"), **kw)


@dataclass
class BenchSection:
    n_policies: int = 50
    split: list[int] = field(default_factory=lambda: [30, 10, 10])
    n_rollouts: int = 100
    n_trajectories: int = 200
    quality_range: list[float] = field(default_factory=lambda: [0.0, 1.0])


@dataclass
class EncoderSection:
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 32
    dropout: float = 0.1


@dataclass
class ScorerSection:
    """Defaults are the desk-scale toy model; see ``full_scale``."""

    variant: str = "transformer"
    K: int = 8
    d_low: int = 16
    d_high: int = 32
    low: EncoderSection = field(default_factory=lambda: EncoderSection(2, 2, 32, 0.1))
    high: EncoderSection = field(default_factory=lambda: EncoderSection(2, 4, 64, 0.1))

    @classmethod
    def full_scale(cls) -> "ScorerSection":
        return cls("transformer", 256, 64, 256, EncoderSection(2, 2, 128, 0.1), EncoderSection(6, 8, 512, 0.1))

    def build(self, d_in: int) -> ScorerConfig:
        return ScorerConfig(
            d_in=d_in,
            d_low=self.d_low,
            d_high=self.d_high,
            low=EncoderConfig(**dataclasses.asdict(self.low)),
            high=EncoderConfig(**dataclasses.asdict(self.high)),
            K=self.K,
            variant=self.variant,
        )


@dataclass
class TrainSection:
    subset_size: int = 256
    n_subsets: int = 50
    epochs: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eps_tie: float = 0.0
    kmeans_iters: int = 100
    val_subsets: int | None = None
    patience: int | None = None
    checkpoint_every: int = 0

    def build(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **dataclasses.asdict(self))


@dataclass
class RankSection:
    n_eval_subsets: int | None = None
    ks: list[int] = field(default_factory=lambda: [1, 3, 5])


@dataclass
class RunConfig:
    seed: int = 0
    bench_dir: str | None = None
    env: EnvSection = field(default_factory=EnvSection)
    bench: BenchSection = field(default_factory=BenchSection)
    scorer: ScorerSection = field(default_factory=ScorerSection)
    train: TrainSection = field(default_factory=TrainSection)
    rank: RankSection = field(default_factory=RankSection)
    distance_max_states: int | None = None

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def from_dict(cls, data: dict, where: str = "config"):
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = from_dict(hint, value, f"{where}.{key}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(RunConfig, data)
