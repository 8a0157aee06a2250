from .base import (
    CacheMiss,
    DimensionMismatch,
    LlmProvider,
    Message,
    ProviderError,
    ProviderRequest,
    ProviderResponse,
    RateLimited,
    RetryPolicy,
    SchemaViolation,
    TransportError,
    UnsupportedRequest,
    Usage,
    canonical_payload,
    request_digest,
)
from .cache import CachingProvider
from .mock import MockProvider

__all__ = [
    "CacheMiss",
    "CachingProvider",
    "DimensionMismatch",
    "LlmProvider",
    "Message",
    "MockProvider",
    "ProviderError",
    "ProviderRequest",
    "ProviderResponse",
    "RateLimited",
    "RetryPolicy",
    "SchemaViolation",
    "TransportError",
    "UnsupportedRequest",
    "Usage",
    "canonical_payload",
    "request_digest",
]
