"""Pipeline configuration: one flat YAML mapping, overridable by flags and environment.

Precedence is environment > command-line flag > file > default. An
environment override for key ``foo_bar`` is ``NARRWATCH_FOO_BAR``.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .clusterer import FitConfig
from .corpus import StudyWindow
from .curation import CurationConfig
from .influence import InfluenceConfig

ENV_PREFIX = "NARRWATCH_"
# keys that locate data rather than change results; left out of the hash
_UNHASHED = {"data_root"}


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    dim: int = 768
    max_tokens: int = 100
    include_title: bool = False
    window_start: str = "2022-01-01"
    window_end: str = "2022-11-01"

    lam: float = 0.60
    max_iterations: int = 50
    centroid_shift_tol: float = 1e-4
    max_new_clusters_per_day: int | None = None
    workers: int = 1

    min_articles: int = 25
    max_single_site_share: float = 0.5
    pmi_alpha: float = 1.0
    top_k_keywords: int = 5
    representatives: int = 5
    stem: bool = False

    epsilon: float = 0.1
    louvain_resolution: float = 1.0
    prune_below: float = 0.0

    bootstrap_iterations: int = 250
    subset_size: int = 100
    window_days: int = 7
    amplify_cutoff: float = 0.15
    min_instances: int = 25
    alpha: float = 0.05
    num_comparisons: int | None = None

    match_threshold: float = 0.60
    sweep_thresholds: list[float] = field(default_factory=lambda: [0.60, 0.65, 0.70, 0.75, 0.80])
    min_weekly_volume: int = 25

    rng_seed: int = 0
    data_root: str = "narrwatch-data"
    ranks_path: str | None = None
    embedding_endpoint: str | None = None
    summarizer_endpoint: str | None = None
    classifier_endpoint: str | None = None
    service_timeout: float = 30.0
    service_retries: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 < self.lam < 1.0:
            raise ConfigError("lam must lie in (0, 1)")
        if not 0.0 < self.max_single_site_share <= 1.0:
            raise ConfigError("max_single_site_share must lie in (0, 1]")
        if not 0.0 < self.amplify_cutoff < 1.0:
            raise ConfigError("amplify_cutoff must lie in (0, 1)")
        if not -1.0 <= self.match_threshold <= 1.0:
            raise ConfigError("match_threshold must lie in [-1, 1]")
        if self.epsilon < 0 or self.pmi_alpha < 0:
            raise ConfigError("epsilon and pmi_alpha must be non-negative")
        if self.dim < 1 or self.max_tokens < 1:
            raise ConfigError("dim and max_tokens must be positive")
        self.window  # parses the dates

    @property
    def window(self) -> StudyWindow:
        try:
            return StudyWindow(dt.date.fromisoformat(str(self.window_start)), dt.date.fromisoformat(str(self.window_end)))
        except ValueError as exc:
            raise ConfigError(f"bad study window: {exc}") from None

    def fit_config(self) -> FitConfig:
        return FitConfig(self.lam, self.max_iterations, self.centroid_shift_tol, self.max_new_clusters_per_day, self.workers)

    def curation_config(self) -> CurationConfig:
        return CurationConfig(
            self.min_articles, self.max_single_site_share, self.pmi_alpha, self.top_k_keywords, self.representatives, self.stem
        )

    def influence_config(self) -> InfluenceConfig:
        return InfluenceConfig(
            bootstrap_iterations=self.bootstrap_iterations,
            subset_size=self.subset_size,
            window_days=self.window_days,
            amplify_cutoff=self.amplify_cutoff,
            min_instances=self.min_instances,
            alpha=self.alpha,
            num_comparisons=self.num_comparisons,
            rng_seed=self.rng_seed,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _coerce(raw: Any) -> Any:
    """Parse a string override (env or flag) as a YAML scalar or list."""
    if not isinstance(raw, str):
        return raw
    return yaml.safe_load(raw) if raw.strip() else None


def load_config(
    path: str | os.PathLike | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> PipelineConfig:
    environ = os.environ if environ is None else environ
    known = {f.name: f for f in fields(PipelineConfig)}
    values: dict[str, Any] = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must be a flat key-value mapping")
        for k, v in data.items():
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            if isinstance(v, dict):
                raise ConfigError(f"config key {k!r} must be a scalar or list")
            values[k] = v
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in known:
            raise ConfigError(f"unknown config key {k!r}")
        values[k] = v
    for k in known:
        env_key = ENV_PREFIX + k.upper()
        if env_key in environ:
            values[k] = _coerce(environ[env_key])
    if "window_start" in values:
        values["window_start"] = str(values["window_start"])
    if "window_end" in values:
        values["window_end"] = str(values["window_end"])
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
