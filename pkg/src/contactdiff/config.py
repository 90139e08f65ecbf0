"""Run configuration: one JSON document, strict about keys, hashed for provenance."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

from .body import KinematicTree
from .contact import ContactPredictorConfig
from .data import DataConfig
from .denoiser import DenoiserConfig
from .diffusion import DiffusionConfig, TrainConfig
from .guidance import GuidanceConfig
from .metrics import ClassifierConfig
from .serialization import config_hash, dumps_json, read_json

OUT_DIR_ENV = "CONTACTDIFF_OUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BodyConfig:
    vertices_per_capsule: int = 32
    regions_per_capsule: int = 1

    def tree(self) -> KinematicTree:
        return KinematicTree(self.vertices_per_capsule, self.regions_per_capsule)


@dataclass(frozen=True)
class NetworksConfig:
    denoiser: DenoiserConfig = DenoiserConfig()
    denoiser_train: TrainConfig = TrainConfig()
    contact: ContactPredictorConfig = ContactPredictorConfig()
    classifier: ClassifierConfig = ClassifierConfig()


@dataclass(frozen=True)
class GuidanceSection:
    lam: tuple[float, float, float, float] = GuidanceConfig().lam
    tau: float = 0.5
    inner_iters: int = 1
    s_p: float = 1.5
    s_l: float = 1.5

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(tuple(self.lam), self.tau, self.inner_iters)


@dataclass(frozen=True)
class SamplingConfig:
    count: int = 200
    seed: int = 0
    split: str = "test"


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "runs/default"


@dataclass(frozen=True)
class RunConfig:
    body: BodyConfig = BodyConfig()
    data: DataConfig = DataConfig()
    diffusion: DiffusionConfig = DiffusionConfig()
    networks: NetworksConfig = NetworksConfig()
    guidance: GuidanceSection = GuidanceSection()
    sampling: SamplingConfig = SamplingConfig()
    paths: PathsConfig = PathsConfig()

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def hash(self) -> str:
        """Hash of everything that affects artifacts; output location excluded."""
        d = self.to_dict()
        d.pop("paths")
        return config_hash(d)

    def dumps(self) -> str:
        return dumps_json(self.to_dict())


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: Any, where: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        default = getattr(defaults, name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{where}.{name}: expected a list")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = read_json(path)
    except ValueError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(data)


def resolve_out_dir(cfg: RunConfig) -> Path:
    """Run directory: the environment override if set, else the config."""
    return Path(os.environ.get(OUT_DIR_ENV) or cfg.paths.out_dir)


def override(cfg: RunConfig, section: str, **changes) -> RunConfig:
    """Replace fields of one section (dotted for nested sections, e.g. ``networks.contact``)."""
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return cfg
    parts = section.split(".")
    chain = [cfg]
    for p in parts:
        chain.append(getattr(chain[-1], p))
    new = dataclasses.replace(chain[-1], **changes)
    for parent, name in zip(reversed(chain[:-1]), reversed(parts)):
        new = dataclasses.replace(parent, **{name: new})
    return new


__all__ = [
    "BodyConfig", "ConfigError", "GuidanceSection", "NetworksConfig", "OUT_DIR_ENV", "PathsConfig",
    "RunConfig", "SamplingConfig", "config_from_dict", "load_config", "override", "resolve_out_dir",
]
