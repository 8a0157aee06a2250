"""HTTP provider speaking the common chat-completions dialect.

Only used for live runs; the test suite runs entirely on the mock and
the replay cache. Structured output is requested as a JSON response and
validated (with the shared repair pass) by the base class.
"""

from __future__ import annotations

import base64
import json
import os
from typing import Sequence

import httpx

from .base import (
    LlmProvider,
    ProviderRequest,
    ProviderResponse,
    RateLimited,
    RetryPolicy,
    TransportError,
    Usage,
)


class HttpProvider(LlmProvider):
    def __init__(
        self,
        base_url: str,
        api_key_env: str = "SUSTAINQA_API_KEY",
        embed_model_id: str = "text-embedding-3-small",
        dimension: int = 1536,
        retry: RetryPolicy | None = None,
        multimodal_models: set[str] | None = None,
        timeout: float = 120.0,
    ) -> None:
        super().__init__(dimension, retry=retry, multimodal_models=multimodal_models)
        self._base_url = base_url.rstrip("/")
        self._api_key = os.environ.get(api_key_env, "")
        self.embed_model_id = embed_model_id
        self._client = httpx.Client(timeout=timeout)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    def _complete_once(self, req: ProviderRequest) -> ProviderResponse:
        messages = []
        for m in req.messages:
            if m.images:
                content: list[dict] = []
                if m.text:
                    content.append({"type": "text", "text": m.text})
                for img in m.images:
                    b64 = base64.b64encode(img).decode("ascii")
                    content.append(
                        {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
                    )
                messages.append({"role": m.role, "content": content})
            else:
                messages.append({"role": m.role, "content": m.text})
        body: dict = {
            "model": req.model_id,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output,
        }
        if req.output_schema is not None:
            body["response_format"] = {"type": "json_object"}
        data = self._post("/chat/completions", body)
        text = data["choices"][0]["message"]["content"] or ""
        structured = None
        if req.output_schema is not None:
            try:
                structured = json.loads(_strip_code_fence(text))
            except json.JSONDecodeError:
                structured = None  # base class turns this into a repair pass
        usage = data.get("usage") or {}
        return ProviderResponse(
            text=text,
            structured=structured,
            usage=Usage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
        )

    def _embed_once(self, texts: Sequence[str]) -> list[list[float]]:
        data = self._post("/embeddings", {"model": self.embed_model_id, "input": list(texts)})
        rows = sorted(data["data"], key=lambda r: r["index"])
        return [row["embedding"] for row in rows]

    def _post(self, path: str, body: dict) -> dict:
        try:
            resp = self._client.post(self._base_url + path, headers=self._headers(), json=body)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429:
            raise RateLimited(resp.text[:200])
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}")
        if resp.status_code >= 400:
            raise TransportError(f"request rejected: {resp.status_code} {resp.text[:200]}")
        return resp.json()


def _strip_code_fence(text: str) -> str:
    stripped = text.strip()
    if stripped.startswith("```"):
        stripped = stripped.split("\n", 1)[-1]
        if stripped.endswith("```"):
            stripped = stripped[: -3]
    return stripped.strip()
