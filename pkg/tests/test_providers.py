"""Provider contract: canonical digests, retries, schema repair, and the
deterministic mock."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sustainqa.providers.base import (
    DimensionMismatch,
    LlmProvider,
    Message,
    ProviderRequest,
    ProviderResponse,
    RateLimited,
    RetryPolicy,
    SchemaViolation,
    TransportError,
    UnsupportedRequest,
    canonical_json,
    canonical_payload,
    embed_digest,
    request_digest,
)
from sustainqa.providers.mock import MockProvider


def req(text="hello", **kwargs):
    return ProviderRequest(model_id="m", messages=(Message("user", text),), **kwargs)


# --- request validation --------------------------------------------------------


def test_request_validation():
    with pytest.raises(ValueError):
        ProviderRequest(model_id="", messages=(Message("user", "x"),))
    with pytest.raises(ValueError):
        ProviderRequest(model_id="m", messages=())
    with pytest.raises(ValueError):
        req(temperature=1.5)
    with pytest.raises(ValueError):
        req(max_output=0)
    with pytest.raises(ValueError):
        Message("assistant", "x")
    with pytest.raises(ValueError):
        Message("user", "")


def test_last_user_text_and_images():
    r = ProviderRequest(
        model_id="m",
        messages=(Message("system", "s"), Message("user", "first"), Message("user", "second")),
    )
    assert r.last_user_text() == "second"
    assert not r.has_images()
    r2 = ProviderRequest(model_id="m", messages=(Message("user", "x", images=(b"png",)),))
    assert r2.has_images()


# --- canonical encoding -----------------------------------------------------------


def test_digest_stable_and_sensitive():
    a = request_digest(req("hello"))
    assert a == request_digest(req("hello"))
    assert a != request_digest(req("hello!"))
    assert a != request_digest(req("hello", temperature=0.5))
    assert len(a) == 64


def test_payload_replaces_image_bytes_with_hashes():
    r = ProviderRequest(model_id="m", messages=(Message("user", "x", images=(b"rawpng",)),))
    payload = canonical_payload(r)
    img = payload["messages"][0]["images"][0]
    assert isinstance(img, str) and len(img) == 64
    # canonical payload always round-trips through json
    json.loads(canonical_json(payload))


text_strategy = st.text(min_size=1, max_size=40)


@settings(max_examples=60, deadline=None)
@given(
    texts=st.lists(text_strategy, min_size=1, max_size=3),
    temperature=st.sampled_from([0.0, 0.25, 0.5, 1.0]),
)
def test_digest_is_a_pure_function_of_content(texts, temperature):
    msgs = tuple(Message("user", t) for t in texts)
    r1 = ProviderRequest(model_id="m", messages=msgs, temperature=temperature)
    r2 = ProviderRequest(model_id="m", messages=msgs, temperature=temperature)
    assert request_digest(r1) == request_digest(r2)
    dumped = canonical_json(canonical_payload(r1))
    assert canonical_json(json.loads(dumped)) == dumped  # stable under a round trip


def test_embed_digest_depends_on_order():
    assert embed_digest("e", ["a", "b"]) != embed_digest("e", ["b", "a"])


# --- retries ---------------------------------------------------------------------


class FlakyProvider(LlmProvider):
    def __init__(self, failures, exc=TransportError):
        self.sleeps = []
        super().__init__(dimension=4, retry=RetryPolicy(max_attempts=3, base_delay=0.1), sleep=self.sleeps.append)
        self.failures = failures
        self.exc = exc
        self.attempts = 0

    def _complete_once(self, request):
        self.attempts += 1
        if self.attempts <= self.failures:
            raise self.exc("boom")
        return ProviderResponse(text="ok")

    def _embed_once(self, texts):
        self.attempts += 1
        if self.attempts <= self.failures:
            raise self.exc("boom")
        return [[1.0, 0.0, 0.0, 0.0] for _ in texts]


def test_retry_recovers_from_transient_failures():
    p = FlakyProvider(failures=2)
    assert p.complete(req()).text == "ok"
    assert p.attempts == 3
    # exponential backoff: base, then base*2
    assert p.sleeps == [pytest.approx(0.1), pytest.approx(0.2)]


def test_retry_exhaustion_raises_the_last_error():
    p = FlakyProvider(failures=5, exc=RateLimited)
    with pytest.raises(RateLimited):
        p.complete(req())
    assert p.attempts == 3


def test_embed_retries_too():
    p = FlakyProvider(failures=1)
    assert p.embed(["x"]) == [[1.0, 0.0, 0.0, 0.0]]


def test_retry_policy_delay_is_capped():
    policy = RetryPolicy(max_attempts=10, base_delay=1.0, max_delay=5.0)
    assert policy.delay(0) == 1.0
    assert policy.delay(1) == 2.0
    assert policy.delay(3) == 5.0  # 8.0 capped


# --- schema validation and repair ---------------------------------------------------


SCHEMA = {"type": "object", "properties": {"n": {"type": "integer"}}, "required": ["n"]}


def test_valid_structured_output_passes_through():
    p = MockProvider()
    p.script("give", {"n": 3})
    resp = p.complete(req("give", output_schema=SCHEMA))
    assert resp.structured == {"n": 3}
    assert len(p.calls) == 1


def test_one_repair_reprompt_then_success():
    p = MockProvider()
    p.script("give", {"n": "not an int"}, once=True)
    # the repair turn's last user message is the repair prompt itself
    p.script("did not validate", {"n": 7})
    resp = p.complete(req("give", output_schema=SCHEMA))
    assert resp.structured == {"n": 7}
    assert len(p.calls) == 2
    repair_text = p.calls[1].messages[-1].text
    assert "did not validate" in repair_text
    # the repair request keeps the original conversation in front
    assert p.calls[1].messages[0].text == p.calls[0].messages[0].text


def test_second_invalid_reply_raises_schema_violation():
    p = MockProvider()
    p.script(lambda r: True, {"n": "bad"})
    with pytest.raises(SchemaViolation):
        p.complete(req("give", output_schema=SCHEMA))
    assert len(p.calls) == 2


def test_multimodal_capability_check():
    p = MockProvider(multimodal_models={"vision-model"})
    image_req = ProviderRequest(model_id="text-model", messages=(Message("user", "x", images=(b"png",)),))
    with pytest.raises(UnsupportedRequest):
        p.complete(image_req)
    ok_req = ProviderRequest(model_id="vision-model", messages=(Message("user", "x", images=(b"png",)),))
    assert p.complete(ok_req).text.startswith("mock-text-")


# --- embeddings -----------------------------------------------------------------


def test_mock_embeddings_are_deterministic_unit_vectors():
    p = MockProvider(dimension=16)
    [v1], [v2] = p.embed(["same text"]), p.embed(["same text"])
    assert v1 == v2
    assert len(v1) == 16
    assert np.linalg.norm(v1) == pytest.approx(1.0, abs=1e-12)
    [v3] = p.embed(["different text"])
    assert v3 != v1
    assert p.embed_calls == 3


def test_dimension_mismatch_is_raised():
    p = MockProvider(dimension=8, embed_fn=lambda text: [1.0, 2.0])
    with pytest.raises(DimensionMismatch):
        p.embed(["x"])


def test_embed_rejects_bare_strings():
    p = MockProvider()
    with pytest.raises(TypeError):
        p.embed("not a list")


# --- mock autofill ----------------------------------------------------------------


def test_autofill_respects_schema_shapes():
    p = MockProvider()
    schema = {
        "type": "object",
        "properties": {
            "kind": {"type": "string", "enum": ["a", "b", "c"]},
            "count": {"type": "integer", "minimum": 2, "maximum": 5},
            "weight": {"type": "number", "minimum": 0.25, "maximum": 0.75},
            "flag": {"type": "boolean"},
            "names": {"type": "array", "items": {"type": "string"}, "minItems": 1, "maxItems": 3},
        },
        "required": ["kind", "count", "weight", "flag", "names"],
    }
    value = p.complete(req("fill me", output_schema=schema)).structured
    assert value["kind"] in {"a", "b", "c"}
    assert 2 <= value["count"] <= 5
    assert 0.25 <= value["weight"] <= 0.75
    assert isinstance(value["flag"], bool)
    assert len(value["names"]) == 3  # sized by maxItems
    assert len(set(value["names"])) == 3  # distinct fillers per position
    # pure function of the request
    again = p.complete(req("fill me", output_schema=schema)).structured
    assert again == value


def test_scripted_rules_match_in_order_and_once():
    p = MockProvider()
    p.script("q", "first", once=True)
    p.script("q", "second")
    assert p.complete(req("q")).text == "first"
    assert p.complete(req("q")).text == "second"
    assert p.complete(req("q")).text == "second"


def test_scripted_exception_is_raised():
    p = MockProvider()
    p.script("q", ValueError("scripted"))
    with pytest.raises(ValueError, match="scripted"):
        p.complete(req("q"))


def test_default_text_reply_is_digest_derived():
    p = MockProvider()
    t1 = p.complete(req("abc")).text
    t2 = p.complete(req("abc")).text
    assert t1 == t2
    assert t1.startswith("mock-text-")


def test_response_json_round_trip():
    resp = ProviderResponse(text="t", structured={"a": 1})
    back = ProviderResponse.from_json(resp.to_json())
    assert back == resp
