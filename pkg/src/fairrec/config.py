"""Run configuration, the two hyperparameter profiles, and strict JSON loading."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

from fairrec.bprmf import BprConfig
from fairrec.curation import CurationConfig
from fairrec.vae import VaeConfig

PIPELINES = ("curated", "vae_item", "vae_user", "bprmf")


class ConfigError(ValueError):
    pass


@dataclass
class SyntheticSource:
    n_users: int = 200
    n_items: int = 600
    n_artists: int = 60
    interactions_per_user: float = 30.0
    popularity_exponent: float = 1.2
    seed: int = 0


@dataclass
class DataConfig:
    source: str = "synthetic"  # or "files"
    synthetic: SyntheticSource = field(default_factory=SyntheticSource)
    interactions: str | None = None
    tracks: str | None = None
    users: str | None = None
    min_interactions: int = 2


@dataclass
class GroupingConfig:
    track_edges: list[int] = field(default_factory=lambda: [10, 100, 1000])
    artist_edges: list[int] = field(default_factory=lambda: [100, 1000, 10000])
    top_countries: int = 9


@dataclass
class LeastTrackConfig:
    latent: int = 15
    epochs: int = 2


@dataclass
class EvaluationConfig:
    k: int = 100
    cv_center: str = "overall"  # or "group_mean"
    weights: dict[str, float] | None = None


@dataclass
class RunConfig:
    pipeline: str = "curated"
    seed: int = 0
    folds: int = 4
    fold_id: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    grouping: GroupingConfig = field(default_factory=GroupingConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    least_track: LeastTrackConfig = field(default_factory=LeastTrackConfig)
    extra_epochs_least_popular: int = 2
    bpr: BprConfig = field(default_factory=BprConfig)
    curation: CurationConfig = field(default_factory=CurationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def validate(self) -> "RunConfig":
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        if self.data.source not in ("synthetic", "files"):
            raise ConfigError(f"data.source must be 'synthetic' or 'files', got {self.data.source!r}")
        if self.data.source == "files" and not all((self.data.interactions, self.data.tracks, self.data.users)):
            raise ConfigError("data.source 'files' needs data.interactions, data.tracks and data.users")
        if self.folds < 1:
            raise ConfigError("folds must be at least 1")
        if self.evaluation.cv_center not in ("overall", "group_mean"):
            raise ConfigError("evaluation.cv_center must be 'overall' or 'group_mean'")
        if len(self.curation.counts) != len(self.grouping.artist_edges) + 1:
            raise ConfigError("curation.counts needs one entry per artist popularity group")
        if self.pipeline == "curated" and self.evaluation.k > self.curation.k:
            raise ConfigError(f"evaluation.k={self.evaluation.k} exceeds curated list length {self.curation.k}")
        for name in ("beta", "gamma"):
            if getattr(self.vae, name) < 0:
                raise ConfigError(f"vae.{name} must be non-negative")
        if not 0 <= self.vae.dropout < 1:
            raise ConfigError("vae.dropout must lie in [0, 1)")
        if self.bpr.normalize not in ("matrix", "row"):
            raise ConfigError("bpr.normalize must be 'matrix' or 'row'")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["curation"]["counts"] = list(self.curation.counts)
        d["curation"]["order"] = list(self.curation.order)
        return d

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# Hyperparameter tables; anything not listed keeps the dataclass default.
PROFILES: dict[str, dict[str, Any]] = {
    "phase1": {
        "vae": {"hidden": 300, "latent": 500, "epochs": 5, "batch_size": 32, "lr": 1e-3,
                "dropout": 0.2, "beta": 0.2, "gamma": 0.0},
        "bpr": {"dim": 64, "epochs": 10, "batch_size": 8192, "lr": 1e-3},
    },
    "phase2": {
        "vae": {"hidden": 300, "latent": 17, "epochs": 2, "batch_size": 32, "lr": 1e-3,
                "dropout": 0.2, "beta": 1e-4, "gamma": 3e-3},
        "least_track": {"latent": 15, "epochs": 2},
        "extra_epochs_least_popular": 2,
        "bpr": {"dim": 200, "epochs": 10, "batch_size": 8192, "lr": 1e-3},
    },
}


def _build(cls, values: dict, path: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(values).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys at {path or 'top level'}: {unknown}")
    defaults = cls()
    kwargs = {}
    for name, f in known.items():
        current = getattr(defaults, name)
        if name not in values:
            kwargs[name] = current
        elif is_dataclass(current):
            kwargs[name] = _build(type(current), values[name], f"{path}.{name}".lstrip("."))
        else:
            kwargs[name] = values[name]
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def make_config(overrides: dict | None = None, profile: str | None = None) -> RunConfig:
    """Profile table first, then ``overrides`` on top; unknown keys are rejected."""
    values: dict = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        values = deep_merge(values, PROFILES[profile])
    values = deep_merge(values, overrides or {})
    return _build(RunConfig, values, "").validate()


def load_config(path, profile: str | None = None) -> RunConfig:
    try:
        overrides = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return make_config(overrides, profile)
