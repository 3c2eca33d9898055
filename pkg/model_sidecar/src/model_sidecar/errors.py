"""Error taxonomy for the sidecar; the app maps these onto HTTP codes."""

from __future__ import annotations


class SidecarError(Exception):
    """Base class for sidecar failures."""


class InputError(SidecarError):
    """The request was well-formed JSON but semantically invalid (maps to 400)."""


class BackendError(SidecarError):
    """The model backend failed while serving a valid request (maps to 500)."""
