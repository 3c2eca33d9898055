from __future__ import annotations

import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from model_sidecar import SidecarConfig, create_app
from model_sidecar.deterministic import DeterministicBackend

GOLDEN_PATH = Path(__file__).resolve().parents[2] / "protocol" / "golden_requests.json"


def golden_cases() -> list[dict]:
    return json.loads(GOLDEN_PATH.read_text(encoding="utf-8"))["cases"]


@pytest.fixture(scope="session")
def backend():
    return DeterministicBackend()


@pytest.fixture(scope="session")
def client(backend):
    app = create_app(SidecarConfig(backend="deterministic"), backend=backend)
    with TestClient(app) as test_client:
        yield test_client
