"""Deterministic in-process provider for tests and offline runs.

Text and structured replies are pure functions of the request, derived
from its canonical digest, so repeated runs produce byte-identical
artifacts. Tests can override behaviour with scripted rules matched
against the request. Embeddings are unit vectors seeded from the sha256
of the text.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .base import LlmProvider, ProviderRequest, ProviderResponse, RetryPolicy, Usage, request_digest

Matcher = Callable[[ProviderRequest], bool]
Responder = Callable[[ProviderRequest], Any]


@dataclass
class _Rule:
    matcher: Matcher
    responder: Responder
    once: bool
    used: int = 0


def _hash_int(*parts: str) -> int:
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


def _hash_fraction(*parts: str) -> float:
    # uniform-ish in [0, 1)
    return _hash_int(*parts) / 2**64


class MockProvider(LlmProvider):
    """Scripted, deterministic stand-in for a hosted model.

    Rules are checked in registration order; the first match wins. With
    no matching rule, a plain-text request gets ``mock-text-<digest>``
    and a structured request gets a minimal instance synthesized from
    the schema (enums pick by hash, strings get distinct deterministic
    fillers, numerics land inside declared bounds).
    """

    def __init__(
        self,
        dimension: int = 32,
        retry: RetryPolicy | None = None,
        embed_fn: Callable[[str], Sequence[float]] | None = None,
        multimodal_models: set[str] | None = None,
    ) -> None:
        super().__init__(dimension, retry=retry, multimodal_models=multimodal_models, sleep=lambda _: None)
        self._rules: list[_Rule] = []
        self._embed_fn = embed_fn
        self.calls: list[ProviderRequest] = []
        self.embed_calls: int = 0

    # -- scripting ---------------------------------------------------------

    def script(self, matcher: Matcher | str, response: Any, once: bool = False) -> None:
        """Register a canned response.

        ``matcher`` is a predicate over the request, or a substring
        tested against the last user message. ``response`` may be a
        string (text reply), a JSON-like value (structured reply), a
        callable producing either, or an Exception instance to raise.
        """
        if isinstance(matcher, str):
            needle = matcher
            matcher = lambda req: needle in req.last_user_text()  # noqa: E731
        responder = response if callable(response) else (lambda req: response)
        self._rules.append(_Rule(matcher, responder, once))

    # -- provider hooks ----------------------------------------------------

    def _complete_once(self, req: ProviderRequest) -> ProviderResponse:
        self.calls.append(req)
        for rule in self._rules:
            if rule.once and rule.used:
                continue
            if rule.matcher(req):
                rule.used += 1
                value = rule.responder(req)
                if isinstance(value, Exception):
                    raise value
                return self._wrap(req, value)
        digest = request_digest(req)
        if req.output_schema is not None:
            return self._wrap(req, _fill_schema(req.output_schema, digest, "$"))
        return self._wrap(req, f"mock-text-{digest[:16]}")

    def _wrap(self, req: ProviderRequest, value: Any) -> ProviderResponse:
        if isinstance(value, ProviderResponse):
            return value
        usage = Usage(input_units=sum(len(m.text) for m in req.messages) // 4 + 1, output_units=16)
        if isinstance(value, str):
            return ProviderResponse(text=value, structured=None, usage=usage)
        return ProviderResponse(text="", structured=value, usage=usage)

    def _embed_once(self, texts: Sequence[str]) -> list[list[float]]:
        self.embed_calls += 1
        return [self._vector(t) for t in texts]

    def _vector(self, text: str) -> list[float]:
        if self._embed_fn is not None:
            vec = np.asarray(self._embed_fn(text), dtype=np.float64)
        else:
            seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
            rng = np.random.default_rng(seed)
            vec = rng.standard_normal(self._dimension)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec = np.zeros(self._dimension)
            vec[0] = 1.0
            norm = 1.0
        return list(np.asarray(vec / norm, dtype=np.float64))


def _fill_schema(schema: dict, digest: str, path: str) -> Any:
    """Synthesize a deterministic minimal instance of a JSON schema."""
    if "enum" in schema:
        options = schema["enum"]
        return options[_hash_int(digest, path) % len(options)]
    if "const" in schema:
        return schema["const"]
    stype = schema.get("type")
    if stype == "object":
        props = schema.get("properties", {})
        required = schema.get("required", list(props.keys()))
        return {key: _fill_schema(props.get(key, {}), digest, f"{path}.{key}") for key in required}
    if stype == "array":
        n = schema.get("maxItems", schema.get("minItems", 1))
        items = schema.get("items", {})
        return [_fill_schema(items, digest, f"{path}[{i}]") for i in range(n)]
    if stype == "boolean":
        return _hash_int(digest, path) % 2 == 0
    if stype == "integer":
        lo = schema.get("minimum", 1)
        hi = schema.get("maximum", max(lo, 10))
        return lo + _hash_int(digest, path) % (hi - lo + 1)
    if stype == "number":
        lo = float(schema.get("minimum", 0.0))
        hi = float(schema.get("maximum", 1.0))
        return lo + (hi - lo) * _hash_fraction(digest, path)
    if stype == "string":
        label = path.rsplit(".", 1)[-1]
        return f"{label}-{_hash_int(digest, path) % 10**8:08d}"
    # untyped: fall back to a string filler
    return f"value-{_hash_int(digest, path) % 10**8:08d}"
