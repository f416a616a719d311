from __future__ import annotations

import numpy as np
import pytest
import requests

from malscan.gateway import (
    HttpProvider,
    ProviderConfig,
    ProviderRejection,
    RateLimited,
    Timeout,
    chat,
)
from malscan.kb.embed import HttpEmbedder, ProviderError
from malscan.prompts import ChatMessage
from testutil import mock_gateway

MESSAGES = [ChatMessage("developer", "inst"), ChatMessage("user", "file content: x")]


class FakeResponse:
    def __init__(self, status_code: int, payload=None):
        self.status_code = status_code
        self._payload = payload or {}

    def json(self):
        return self._payload


@pytest.fixture
def post_stub(monkeypatch):
    calls: dict = {}

    def install(response=None, exc=None):
        def fake_post(url, json=None, headers=None, timeout=None):
            calls.update(url=url, payload=json, headers=headers, timeout=timeout)
            if exc is not None:
                raise exc
            return response

        monkeypatch.setattr(requests, "post", fake_post)
        return calls

    return install


class TestHttpProvider:
    CFG = ProviderConfig(endpoint="https://llm.example/v1/chat", model="m1")

    def test_success_maps_roles(self, post_stub):
        calls = post_stub(FakeResponse(200, {"choices": [{"message": {"content": "Benign"}}]}))
        assert HttpProvider(self.CFG).complete(MESSAGES) == "Benign"
        roles = [m["role"] for m in calls["payload"]["messages"]]
        assert roles == ["system", "user"]  # developer mapped to system
        assert calls["payload"]["model"] == "m1"
        assert calls["payload"]["temperature"] == 0.0

    def test_429_is_rate_limited(self, post_stub):
        post_stub(FakeResponse(429))
        with pytest.raises(RateLimited):
            HttpProvider(self.CFG).complete(MESSAGES)

    def test_500_is_retryable(self, post_stub):
        post_stub(FakeResponse(503))
        with pytest.raises(RateLimited):
            HttpProvider(self.CFG).complete(MESSAGES)

    def test_4xx_is_rejection(self, post_stub):
        post_stub(FakeResponse(401))
        with pytest.raises(ProviderRejection):
            HttpProvider(self.CFG).complete(MESSAGES)

    def test_transport_timeout(self, post_stub):
        post_stub(exc=requests.Timeout("slow"))
        with pytest.raises(Timeout):
            HttpProvider(self.CFG).complete(MESSAGES)

    def test_malformed_body_is_rejection(self, post_stub):
        post_stub(FakeResponse(200, {"nope": True}))
        with pytest.raises(ProviderRejection):
            HttpProvider(self.CFG).complete(MESSAGES)

    def test_api_key_from_environment(self, post_stub, monkeypatch):
        calls = post_stub(FakeResponse(200, {"choices": [{"message": {"content": "x"}}]}))
        monkeypatch.setenv("TEST_LLM_KEY", "sekrit")
        cfg = ProviderConfig(endpoint="https://e", model="m", api_key_env="TEST_LLM_KEY")
        HttpProvider(cfg).complete(MESSAGES)
        assert calls["headers"]["Authorization"] == "Bearer sekrit"

    def test_missing_api_key_rejected(self, post_stub, monkeypatch):
        post_stub(FakeResponse(200))
        monkeypatch.delenv("TEST_LLM_KEY", raising=False)
        cfg = ProviderConfig(endpoint="https://e", model="m", api_key_env="TEST_LLM_KEY")
        with pytest.raises(ProviderRejection):
            HttpProvider(cfg).complete(MESSAGES)


class TestHttpEmbedder:
    def test_success(self, post_stub):
        vec = [0.5, -0.5, 0.5, -0.5]
        post_stub(FakeResponse(200, {"data": [{"embedding": vec}]}))
        embedder = HttpEmbedder("https://e/v1/embeddings", "emb", dimension=4)
        assert np.allclose(embedder.embed("text"), vec)

    def test_wrong_dimension_rejected(self, post_stub):
        post_stub(FakeResponse(200, {"data": [{"embedding": [1.0, 2.0]}]}))
        embedder = HttpEmbedder("https://e", "emb", dimension=4)
        with pytest.raises(ProviderError):
            embedder.embed("text")

    def test_transport_failure(self, post_stub):
        post_stub(exc=requests.ConnectionError("down"))
        embedder = HttpEmbedder("https://e", "emb", dimension=4)
        with pytest.raises(ProviderError):
            embedder.embed("text")

    def test_non_200_rejected(self, post_stub):
        post_stub(FakeResponse(500))
        embedder = HttpEmbedder("https://e", "emb", dimension=4)
        with pytest.raises(ProviderError):
            embedder.embed("text")


def test_chat_convenience_wrapper_accepts_injected_provider():
    gateway = mock_gateway(default="pong")
    answer = chat(MESSAGES, gateway.cfg, provider=gateway.provider, sleep=lambda s: None)
    assert answer == "pong"
