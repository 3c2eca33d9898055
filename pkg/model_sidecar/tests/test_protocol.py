"""Wire-protocol conformance: replay the shared golden-request suite.

Every case asserts its expected status and declarative checks; every POST
is sent twice to pin byte-identical response bodies, and every response
must carry model-identifier headers.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import golden_cases

CASES = golden_cases()

PENN_TAGS = {
    "NN", "NNS", "NNP", "NNPS", "VB", "VBZ", "VBP", "VBD", "VBN", "VBG",
    "DT", "IN", "CC", "TO", "PRP", "PRP$", "RB", "RP", "JJ", "JJR", "JJS",
    "CD", "WRB", "MD", "SYM",
}


def _send(client, case):
    request = case["request"]
    if request["method"] == "GET":
        return client.get(request["endpoint"])
    return client.post(request["endpoint"], json=request["body"])


def _cosine(u, v) -> float:
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def _expected_embed_capability(case) -> str:
    request = case["request"]
    if request["endpoint"] == "/v1/embed_image":
        return "image_embed"
    space = request["body"]["space"]
    return "qa_embed" if space.startswith("qa_") else "joint_embed_text"


class _Checker:
    def __init__(self, client, case, payload):
        self.client = client
        self.case = case
        self.payload = payload

    def run(self, name: str, *args) -> None:
        getattr(self, name)(*args)

    def json_error(self):
        assert isinstance(self.payload.get("error"), str)
        assert self.payload["error"]

    def embed_shape(self):
        capabilities = self.client.get("/v1/capabilities").json()
        advertised = capabilities["dims"][_expected_embed_capability(self.case)]
        body = self.case["request"]["body"]
        n = len(body.get("texts", body.get("image_paths_or_urls", [])))
        assert self.payload["dim"] == advertised
        vectors = self.payload["vectors"]
        assert len(vectors) == n
        for vector in vectors:
            assert len(vector) == advertised
            assert all(math.isfinite(x) for x in vector)

    def self_similarity(self, i, j, tolerance):
        vectors = self.payload["vectors"]
        assert abs(_cosine(vectors[i], vectors[j]) - 1.0) <= tolerance

    def similarity_band(self, i, j, low, high):
        vectors = self.payload["vectors"]
        assert low <= _cosine(vectors[i], vectors[j]) <= high

    def mlm_shape(self):
        candidates = self.payload["candidates"]
        assert candidates
        assert len(candidates) <= self.case["request"]["body"]["top_k"]
        log_probs = [c["log_prob"] for c in candidates]
        assert all(math.isfinite(lp) for lp in log_probs)
        assert all(a >= b for a, b in zip(log_probs, log_probs[1:]))
        assert math.isfinite(self.payload["original_log_prob"])

    def mlm_top_contains(self, word, k):
        words = [c["word"] for c in self.payload["candidates"][:k]]
        assert word in words

    def pos_shape(self):
        texts = self.case["request"]["body"]["texts"]
        tags = self.payload["tags"]
        assert len(tags) == len(texts)
        for text, sentence in zip(texts, tags):
            assert len(sentence) == len(text.split())
            for surface, tag in sentence:
                assert tag in PENN_TAGS, (surface, tag)

    def pos_tag_at(self, text_index, word_index, surface, tag):
        assert self.payload["tags"][text_index][word_index] == [surface, tag]

    def capabilities_shape(self):
        capabilities = self.payload["capabilities"]
        dims = self.payload["dims"]
        assert capabilities == sorted(capabilities)
        assert all(isinstance(c, str) for c in capabilities)
        assert set(dims) <= set(capabilities)
        assert all(isinstance(d, int) and d > 0 for d in dims.values())
        assert not any("video" in c for c in capabilities)


@pytest.mark.parametrize("case", CASES, ids=[c["name"] for c in CASES])
def test_golden_case(client, case):
    response = _send(client, case)
    assert response.status_code == case["expect"]["status"], response.text
    assert response.headers.get("X-Model-Id")
    assert response.headers.get("X-Backend-Id")
    checker = _Checker(client, case, response.json())
    for name, *args in case["expect"]["checks"]:
        checker.run(name, *args)


@pytest.mark.parametrize(
    "case",
    [c for c in CASES if c["request"]["method"] == "POST"],
    ids=[c["name"] for c in CASES if c["request"]["method"] == "POST"],
)
def test_identical_requests_return_identical_bodies(client, case):
    first = _send(client, case)
    second = _send(client, case)
    assert first.content == second.content
    assert first.headers["X-Model-Id"] == second.headers["X-Model-Id"]


def test_malformed_json_body_is_a_structured_400(client):
    response = client.post(
        "/v1/embed_text",
        content=b'{"texts": ["x"', headers={"Content-Type": "application/json"},
    )
    assert response.status_code == 400
    assert isinstance(response.json()["error"], str)


def test_unexpected_fields_are_rejected(client):
    response = client.post(
        "/v1/embed_text", json={"texts": ["x"], "space": "joint", "mode": "fast"}
    )
    assert response.status_code == 400
    assert "mode" in response.json()["error"]


def test_batch_cap_is_enforced():
    from fastapi.testclient import TestClient

    from model_sidecar import SidecarConfig, create_app

    app = create_app(SidecarConfig(backend="deterministic", max_batch=2))
    with TestClient(app) as small_client:
        response = small_client.post(
            "/v1/embed_text", json={"texts": ["a", "b", "c"], "space": "joint"}
        )
    assert response.status_code == 400
    assert "cap" in response.json()["error"]


def test_capabilities_match_loaded_models(client, backend):
    payload = client.get("/v1/capabilities").json()
    assert payload["capabilities"] == sorted(backend.model_ids)
    assert payload["dims"] == backend.dims
