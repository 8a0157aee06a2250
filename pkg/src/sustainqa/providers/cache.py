"""Content-addressed record/replay cache around a provider.

Each completed request is stored as one JSON file named by the request
digest, so identical requests replay without touching the backing
provider. Replay mode turns a cache miss into an error, which is what
keeps CI fully offline.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Sequence

from .base import (
    CacheMiss,
    LlmProvider,
    ProviderRequest,
    ProviderResponse,
    canonical_json,
    canonical_payload,
    embed_digest,
    request_digest,
)

_MODES = ("record", "replay", "readwrite")


class CachingProvider(LlmProvider):
    """Wraps another provider with an on-disk request cache.

    Modes:
        record:    always call through, overwrite the cache entry.
        replay:    never call through; missing entry raises CacheMiss.
        readwrite: replay on hit, call through and record on miss.
    """

    def __init__(self, inner: LlmProvider, cache_dir: str | Path, mode: str = "readwrite") -> None:
        if mode not in _MODES:
            raise ValueError(f"cache mode must be one of {_MODES}, got {mode!r}")
        super().__init__(inner.dimension, sleep=lambda _: None)
        self._inner = inner
        self._dir = Path(cache_dir)
        self._dir.mkdir(parents=True, exist_ok=True)
        self._mode = mode
        self._write_lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.live_calls = 0

    def supports_images(self, model_id: str) -> bool:
        return self._inner.supports_images(model_id)

    # The retry/repair loop lives in the inner provider; this wrapper
    # overrides complete/embed wholesale so one outer request maps to one
    # cache entry even when the inner call chain re-prompts.

    def complete(self, req: ProviderRequest) -> ProviderResponse:
        key = request_digest(req)
        path = self._dir / f"{key}.json"
        if self._mode in ("replay", "readwrite"):
            cached = self._read(path)
            if cached is not None:
                self.hits += 1
                return ProviderResponse.from_json(cached["response"])
            if self._mode == "replay":
                raise CacheMiss(f"no cached response for digest {key}")
        self.misses += 1
        self.live_calls += 1
        resp = self._inner.complete(req)
        self._write(path, {"request": canonical_payload(req), "response": resp.to_json()})
        return resp

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        key = embed_digest(getattr(self._inner, "embed_model_id", "default"), texts)
        path = self._dir / f"emb-{key}.json"
        if self._mode in ("replay", "readwrite"):
            cached = self._read(path)
            if cached is not None:
                self.hits += 1
                return cached["vectors"]
            if self._mode == "replay":
                raise CacheMiss(f"no cached embedding for digest {key}")
        self.misses += 1
        self.live_calls += 1
        vectors = self._inner.embed(texts)
        self._write(path, {"texts": list(texts), "vectors": vectors})
        return vectors

    def _complete_once(self, req: ProviderRequest) -> ProviderResponse:  # pragma: no cover
        raise NotImplementedError("CachingProvider overrides complete()")

    def _embed_once(self, texts: Sequence[str]) -> list[list[float]]:  # pragma: no cover
        raise NotImplementedError("CachingProvider overrides embed()")

    @staticmethod
    def _read(path: Path) -> dict | None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None

    def _write(self, path: Path, payload: dict) -> None:
        # atomic publish so concurrent readers never see partial JSON
        data = canonical_json(payload)
        with self._write_lock:
            fd, tmp = tempfile.mkstemp(dir=self._dir, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(data)
                os.replace(tmp, path)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)
