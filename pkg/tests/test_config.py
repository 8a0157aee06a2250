"""Config file loading and provider construction."""

import pytest

from sustainqa.config import (
    AppConfig,
    CacheSettings,
    GenerationSettings,
    ProviderSettings,
    load_config,
    make_provider,
)
from sustainqa.providers.cache import CachingProvider
from sustainqa.providers.http_api import HttpProvider
from sustainqa.providers.mock import MockProvider


def test_defaults_without_a_file():
    cfg = load_config(None)
    assert cfg.provider.kind == "mock"
    assert cfg.cache.dir is None
    assert cfg.models.generator == "generator-model"
    assert cfg.generation.n_per_type == 10
    assert cfg.pipeline.variant == "custom_rag"
    assert cfg.generation.thresholds().local == 9.0
    assert cfg.generation.thresholds().cross_industry == 7.0


def test_yaml_overrides_only_named_keys(tmp_path):
    path = tmp_path / "app.yaml"
    path.write_text(
        "provider:\n"
        "  kind: http\n"
        "  dimension: 64\n"
        "cache:\n"
        "  dir: /tmp/cache\n"
        "  mode: replay\n"
        "models:\n"
        "  generator: big-model\n"
        "generation:\n"
        "  n_per_type: 3\n"
        "  threshold_cross: 6.5\n"
        "pipeline:\n"
        "  variant: baseline\n"
        "  retriever: hybrid\n",
        encoding="utf-8",
    )
    cfg = load_config(path)
    assert cfg.provider.kind == "http"
    assert cfg.provider.dimension == 64
    assert cfg.provider.base_url == "https://api.openai.com/v1"  # untouched default
    assert cfg.cache.dir == "/tmp/cache"
    assert cfg.cache.mode == "replay"
    assert cfg.models.generator == "big-model"
    assert cfg.models.judge == "judge-model"
    assert cfg.generation.n_per_type == 3
    assert cfg.generation.thresholds().cross_industry == 6.5
    assert cfg.pipeline.variant == "baseline"
    assert cfg.pipeline.retriever == "hybrid"


def test_json_config_is_accepted(tmp_path):
    path = tmp_path / "app.json"
    path.write_text('{"generation": {"seed": 11}}', encoding="utf-8")
    assert load_config(path).generation.seed == 11


def test_empty_yaml_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("", encoding="utf-8")
    assert load_config(path) == AppConfig()


def test_unknown_keys_are_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("provider:\n  kindd: mock\n", encoding="utf-8")
    with pytest.raises(ValueError, match="kindd"):
        load_config(path)
    path.write_text("pipeline:\n  reranker: fancy\n", encoding="utf-8")
    with pytest.raises(ValueError, match="reranker"):
        load_config(path)


def test_invalid_section_values_fail_on_construction(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("pipeline:\n  variant: nonsense\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_config(path)


def test_make_provider_mock_and_cache_wrap(tmp_path):
    cfg = AppConfig()
    provider = make_provider(cfg)
    assert isinstance(provider, MockProvider)

    cached_cfg = AppConfig(cache=CacheSettings(dir=str(tmp_path / "cache"), mode="record"))
    cached = make_provider(cached_cfg)
    assert isinstance(cached, CachingProvider)
    assert (cached.hits, cached.misses, cached.live_calls) == (0, 0, 0)


def test_make_provider_http(tmp_path):
    cfg = AppConfig(
        provider=ProviderSettings(kind="http", base_url="https://example.test/v1", dimension=8)
    )
    provider = make_provider(cfg)
    assert isinstance(provider, HttpProvider)
    cfg.provider.kind = "neither"
    with pytest.raises(ValueError):
        make_provider(cfg)


def test_config_round_trips_to_json():
    data = AppConfig(generation=GenerationSettings(seed=4)).to_json()
    assert data["generation"]["seed"] == 4
    assert set(data) == {"provider", "cache", "models", "generation", "pipeline"}
