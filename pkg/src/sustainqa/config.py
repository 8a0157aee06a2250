"""File-based configuration for the CLI and the service.

YAML (or JSON) with sections: provider, cache, models, generation,
pipeline. Secrets never live in the file; the provider section names
the environment variable holding the API key.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .generation import GateThresholds
from .pipelines import ModelRoles, PipelineConfig
from .providers.base import LlmProvider, RetryPolicy
from .providers.cache import CachingProvider
from .providers.http_api import HttpProvider
from .providers.mock import MockProvider


@dataclass
class ProviderSettings:
    kind: str = "mock"  # mock | http
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "SUSTAINQA_API_KEY"
    embed_model: str = "text-embedding-3-small"
    dimension: int = 32
    multimodal_models: list[str] | None = None
    retry_max_attempts: int = 3
    retry_base_delay: float = 0.2


@dataclass
class CacheSettings:
    dir: str | None = None
    mode: str = "readwrite"  # record | replay | readwrite


@dataclass
class GenerationSettings:
    n_per_type: int = 10
    method: str = "baseline"
    temperature: float = 0.5
    threshold_local: float = 9.0
    threshold_cross: float = 7.0
    similarity_threshold: float = 0.99
    seed: int = 0

    def thresholds(self) -> GateThresholds:
        return GateThresholds(local=self.threshold_local, cross_industry=self.threshold_cross)


@dataclass
class AppConfig:
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    cache: CacheSettings = field(default_factory=CacheSettings)
    models: ModelRoles = field(default_factory=ModelRoles)
    generation: GenerationSettings = field(default_factory=GenerationSettings)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def to_json(self) -> dict:
        return asdict(self)


def _merge(dc_factory, data: dict | None):
    if not data:
        return dc_factory()
    base = dc_factory()
    known = {f.name for f in fields(base)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config key(s) {sorted(unknown)} in {type(base).__name__}")
    return replace(base, **data)


def load_config(path: str | Path | None = None) -> AppConfig:
    """Read YAML/JSON config; missing file or None gives pure defaults."""
    if path is None:
        return AppConfig()
    raw = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(raw) if str(path).endswith((".yaml", ".yml")) else json.loads(raw)
    data = data or {}
    cfg = AppConfig(
        provider=_merge(ProviderSettings, data.get("provider")),
        cache=_merge(CacheSettings, data.get("cache")),
        models=_merge(ModelRoles, data.get("models")),
        generation=_merge(GenerationSettings, data.get("generation")),
        pipeline=_merge(PipelineConfig, data.get("pipeline")),
    )
    return cfg


def make_provider(cfg: AppConfig) -> LlmProvider:
    """Build the configured provider, wrapped in the on-disk cache when a
    cache directory is set."""
    p = cfg.provider
    retry = RetryPolicy(max_attempts=p.retry_max_attempts, base_delay=p.retry_base_delay)
    multimodal = set(p.multimodal_models) if p.multimodal_models is not None else None
    if p.kind == "mock":
        inner: LlmProvider = MockProvider(dimension=p.dimension, retry=retry, multimodal_models=multimodal)
    elif p.kind == "http":
        inner = HttpProvider(
            base_url=p.base_url,
            api_key_env=p.api_key_env,
            embed_model_id=p.embed_model,
            dimension=p.dimension,
            retry=retry,
            multimodal_models=multimodal,
        )
    else:
        raise ValueError(f"unknown provider kind {p.kind!r}")
    if cfg.cache.dir:
        return CachingProvider(inner, cfg.cache.dir, cfg.cache.mode)
    return inner
