"""Server configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InputError

CAPABILITIES = (
    "joint_embed_text",
    "qa_embed",
    "mlm",
    "pos_tag",
    "image_embed",
)

BACKENDS = ("auto", "deterministic", "transformers")


@dataclass
class SidecarConfig:
    """Bind address, backend choice, and per-capability model overrides.

    ``model_ids`` only matters for the transformers backend, where it picks
    which pretrained checkpoint to load per capability; the deterministic
    backend names its own models. The capability list advertised by
    /v1/capabilities always reflects what the loaded backend can actually
    serve.
    """

    host: str = "127.0.0.1"
    port: int = 8791
    backend: str = "auto"
    max_batch: int = 128
    model_ids: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise InputError(
                f"unknown backend {self.backend!r}; expected one of {BACKENDS}"
            )
        if not 0 < self.port < 65536:
            raise InputError(f"port out of range: {self.port}")
        if self.max_batch < 1:
            raise InputError(f"max_batch must be >= 1, got {self.max_batch}")
        for capability in self.model_ids:
            if capability not in CAPABILITIES:
                raise InputError(
                    f"model override names unknown capability {capability!r}; "
                    f"expected one of {CAPABILITIES}"
                )
