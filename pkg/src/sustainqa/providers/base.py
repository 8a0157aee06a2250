"""Provider-neutral LLM interface.

Every model call in the toolkit goes through :class:`LlmProvider`, which
pins down retry behaviour, structured-output validation with a single
repair re-prompt, and a canonical request encoding that downstream
caching keys off.
"""

from __future__ import annotations

import hashlib
import json
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import jsonschema


class ProviderError(Exception):
    """Base class for provider failures."""


class TransportError(ProviderError):
    """Network-level failure talking to the backing model service."""


class RateLimited(ProviderError):
    """Backend refused the call for rate reasons; retried up to the cap."""


class SchemaViolation(ProviderError):
    """Structured output failed schema validation even after one repair."""


class DimensionMismatch(ProviderError):
    """Embedding vector length differs from the provider's declared dimension."""


class CacheMiss(ProviderError):
    """Replay-only cache had no entry for the request."""


class UnsupportedRequest(ProviderError):
    """Request shape the target model cannot serve (e.g. images to a text model)."""


_ROLES = ("system", "user")


@dataclass(frozen=True)
class Message:
    """One chat message. ``images`` holds raw PNG payloads."""

    role: str
    text: str = ""
    images: tuple[bytes, ...] = ()

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"message role must be one of {_ROLES}, got {self.role!r}")
        if not self.text and not self.images:
            raise ValueError("message must carry text or at least one image")


@dataclass(frozen=True)
class ProviderRequest:
    """A single completion request.

    ``output_schema``, when set, demands structured output validating
    against that JSON schema. Temperature is clamped to [0, 1] by
    validation, not silently.
    """

    model_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    output_schema: dict | None = None
    max_output: int = 2048

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if not self.messages:
            raise ValueError("request must contain at least one message")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature must be in [0, 1], got {self.temperature}")
        if self.max_output < 1:
            raise ValueError("max_output must be positive")

    def has_images(self) -> bool:
        return any(m.images for m in self.messages)

    def last_user_text(self) -> str:
        for m in reversed(self.messages):
            if m.role == "user" and m.text:
                return m.text
        return ""


@dataclass(frozen=True)
class Usage:
    input_units: int = 0
    output_units: int = 0


@dataclass(frozen=True)
class ProviderResponse:
    """Completion result. ``structured`` is set iff the request carried a
    schema, and always validates against it."""

    text: str
    structured: Any = None
    usage: Usage = field(default_factory=Usage)

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "structured": self.structured,
            "usage": {"input_units": self.usage.input_units, "output_units": self.usage.output_units},
        }

    @classmethod
    def from_json(cls, data: dict) -> "ProviderResponse":
        u = data.get("usage") or {}
        return cls(
            text=data["text"],
            structured=data.get("structured"),
            usage=Usage(int(u.get("input_units", 0)), int(u.get("output_units", 0))),
        )


def canonical_payload(req: ProviderRequest) -> dict:
    """Order-stable encoding of a request.

    Image bytes are replaced by their sha256 so payloads stay printable.
    Object keys are sorted at serialization time; message order is
    semantic and preserved.
    """
    return {
        "model_id": req.model_id,
        "messages": [
            {
                "role": m.role,
                "text": m.text,
                "images": [hashlib.sha256(img).hexdigest() for img in m.images],
            }
            for m in req.messages
        ],
        "temperature": req.temperature,
        "output_schema": req.output_schema,
        "max_output": req.max_output,
    }


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def request_digest(req: ProviderRequest) -> str:
    """Content-addressed cache key: sha256 over the canonical payload."""
    return hashlib.sha256(canonical_json(canonical_payload(req)).encode("utf-8")).hexdigest()


def embed_digest(model_id: str, texts: Sequence[str]) -> str:
    payload = {"embed_model": model_id, "texts": list(texts)}
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.2
    max_delay: float = 5.0

    def delay(self, attempt: int) -> float:
        # attempt is zero-based; exponential backoff capped at max_delay
        return min(self.base_delay * (2 ** attempt), self.max_delay)


_REPAIR_TEMPLATE = (
    "The previous reply did not validate against the required JSON schema: {error}. "
    "Reply again with JSON that conforms exactly to the schema, and nothing else."
)


class LlmProvider(ABC):
    """Abstract chat/embedding provider.

    Concrete providers implement the single-shot hooks `_complete_once`
    and `_embed_once`; this base class layers on transient-error retries
    with exponential backoff, structured-output validation with one
    repair re-prompt, and the multimodal capability check.
    """

    def __init__(
        self,
        dimension: int,
        retry: RetryPolicy | None = None,
        multimodal_models: set[str] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self._dimension = dimension
        self._retry = retry or RetryPolicy()
        self._multimodal = multimodal_models  # None means "all models accept images"
        self._sleep = sleep

    @property
    def dimension(self) -> int:
        """Embedding dimension, fixed per provider."""
        return self._dimension

    def supports_images(self, model_id: str) -> bool:
        return self._multimodal is None or model_id in self._multimodal

    @abstractmethod
    def _complete_once(self, req: ProviderRequest) -> ProviderResponse:
        """One attempt, no retries, no schema enforcement."""

    @abstractmethod
    def _embed_once(self, texts: Sequence[str]) -> list[list[float]]:
        """One embedding attempt for a batch of texts."""

    def complete(self, req: ProviderRequest) -> ProviderResponse:
        """Run a request to completion.

        Raises:
            UnsupportedRequest: images sent to a non-multimodal model.
            TransportError / RateLimited: after the retry cap.
            SchemaViolation: structured output still invalid after the
                single repair re-prompt.
        """
        if req.has_images() and not self.supports_images(req.model_id):
            raise UnsupportedRequest(f"model {req.model_id!r} is not declared multimodal")
        resp = self._with_retries(req)
        if req.output_schema is None:
            return resp
        err = self._schema_error(resp.structured, req.output_schema)
        if err is None:
            return resp
        repair = ProviderRequest(
            model_id=req.model_id,
            messages=req.messages + (Message("user", _REPAIR_TEMPLATE.format(error=err)),),
            temperature=req.temperature,
            output_schema=req.output_schema,
            max_output=req.max_output,
        )
        resp = self._with_retries(repair)
        err = self._schema_error(resp.structured, req.output_schema)
        if err is not None:
            raise SchemaViolation(err)
        return resp

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        """Embed a batch of texts; every vector has length `dimension`."""
        if not isinstance(texts, (list, tuple)):
            raise TypeError("embed expects a list of texts")
        vectors = self._embed_with_retries(list(texts))
        for vec in vectors:
            if len(vec) != self._dimension:
                raise DimensionMismatch(
                    f"provider returned length {len(vec)}, declared dimension {self._dimension}"
                )
        return vectors

    def _with_retries(self, req: ProviderRequest) -> ProviderResponse:
        last: ProviderError | None = None
        for attempt in range(self._retry.max_attempts):
            try:
                return self._complete_once(req)
            except (TransportError, RateLimited) as exc:
                last = exc
                if attempt + 1 < self._retry.max_attempts:
                    self._sleep(self._retry.delay(attempt))
        assert last is not None
        raise last

    def _embed_with_retries(self, texts: list[str]) -> list[list[float]]:
        last: ProviderError | None = None
        for attempt in range(self._retry.max_attempts):
            try:
                return self._embed_once(texts)
            except (TransportError, RateLimited) as exc:
                last = exc
                if attempt + 1 < self._retry.max_attempts:
                    self._sleep(self._retry.delay(attempt))
        assert last is not None
        raise last

    @staticmethod
    def _schema_error(value: Any, schema: dict) -> str | None:
        if value is None:
            return "no structured value was produced"
        try:
            jsonschema.validate(value, schema)
        except jsonschema.ValidationError as exc:
            return exc.message
        return None
