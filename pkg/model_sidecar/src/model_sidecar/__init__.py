"""Inference sidecar: embeddings, masked fills, and POS tags over HTTP."""

from __future__ import annotations

__version__ = "0.1.0"

from .app import create_app
from .config import CAPABILITIES, SidecarConfig
from .deterministic import DeterministicBackend
from .errors import BackendError, InputError, SidecarError

__all__ = [
    "BackendError",
    "CAPABILITIES",
    "DeterministicBackend",
    "InputError",
    "SidecarConfig",
    "SidecarError",
    "create_app",
    "__version__",
]
