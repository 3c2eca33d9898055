"""HTTP surface.

Endpoints follow the retrieval engine's sidecar wire protocol: POST
/v1/embed_text, /v1/mlm_fill, /v1/pos_tag, /v1/embed_image, plus GET
/v1/capabilities and /healthz. Every non-2xx response body is
{"error": str}; every response carries the serving model's identifier in
the X-Model-Id header and the backend bundle in X-Backend-Id. Video
embedding is deliberately not served: clip embeddings are precomputed
offline and ingested by the engine as files.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict
from starlette.exceptions import HTTPException as StarletteHTTPException

from .config import SidecarConfig
from .deterministic import DeterministicBackend
from .errors import BackendError, InputError

logger = logging.getLogger(__name__)


class EmbedTextRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    texts: list[str]
    space: str


class MlmFillRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    text: str
    mask_word_index: int
    top_k: int


class PosTagRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    texts: list[str]


class EmbedImageRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    image_paths_or_urls: list[str]


def load_backend(config: SidecarConfig):
    if config.backend == "deterministic":
        return DeterministicBackend()
    if config.backend == "transformers":
        from .real import TransformersBackend

        return TransformersBackend(config.model_ids)
    from .real import transformers_available

    if transformers_available():
        from .real import TransformersBackend

        return TransformersBackend(config.model_ids)
    logger.info("no local model weights found; using the deterministic backend")
    return DeterministicBackend()


def create_app(config: SidecarConfig | None = None, backend=None) -> FastAPI:
    config = config or SidecarConfig()
    if backend is None:
        backend = load_backend(config)
    app = FastAPI(title="model-sidecar", docs_url=None, redoc_url=None)

    def respond(
        payload: dict, capability: str | None, status_code: int = 200
    ) -> JSONResponse:
        model_id = (
            backend.model_ids[capability] if capability else backend.backend_id
        )
        return JSONResponse(
            payload,
            status_code=status_code,
            headers={"X-Model-Id": model_id, "X-Backend-Id": backend.backend_id},
        )

    def check_batch(n: int, what: str) -> None:
        if n == 0:
            raise InputError(f"{what} must be non-empty")
        if n > config.max_batch:
            raise InputError(f"batch of {n} {what} exceeds cap {config.max_batch}")

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first.get("loc", ()) if part != "body")
        detail = f"{where}: {first.get('msg', 'invalid')}" if where else first.get("msg", "invalid")
        return respond({"error": f"invalid request: {detail}"}, None, 400)

    @app.exception_handler(StarletteHTTPException)
    async def on_http_error(request: Request, exc: StarletteHTTPException):
        return respond({"error": str(exc.detail)}, None, exc.status_code)

    @app.exception_handler(InputError)
    async def on_input_error(request: Request, exc: InputError):
        return respond({"error": str(exc)}, None, 400)

    @app.exception_handler(BackendError)
    async def on_backend_error(request: Request, exc: BackendError):
        return respond({"error": str(exc)}, None, 500)

    @app.get("/healthz")
    def healthz():
        return respond({"status": "ok"}, None)

    @app.get("/v1/capabilities")
    def capabilities():
        return respond(
            {
                "capabilities": sorted(backend.model_ids),
                "dims": dict(sorted(backend.dims.items())),
            },
            None,
        )

    @app.post("/v1/embed_text")
    def embed_text(body: EmbedTextRequest):
        check_batch(len(body.texts), "texts")
        vectors = backend.embed_text(body.texts, body.space)
        capability = "qa_embed" if body.space.startswith("qa_") else "joint_embed_text"
        return respond(
            {"dim": int(vectors.shape[1]), "vectors": vectors.tolist()}, capability
        )

    @app.post("/v1/mlm_fill")
    def mlm_fill(body: MlmFillRequest):
        original_log_prob, candidates = backend.mlm_fill(
            body.text, body.mask_word_index, body.top_k
        )
        return respond(
            {
                "original_log_prob": original_log_prob,
                "candidates": [
                    {"word": word, "log_prob": log_prob}
                    for word, log_prob in candidates
                ],
            },
            "mlm",
        )

    @app.post("/v1/pos_tag")
    def pos_tag(body: PosTagRequest):
        check_batch(len(body.texts), "texts")
        tags = backend.pos_tag(body.texts)
        return respond(
            {"tags": [[[word, tag] for word, tag in sent] for sent in tags]},
            "pos_tag",
        )

    @app.post("/v1/embed_image")
    def embed_image(body: EmbedImageRequest):
        check_batch(len(body.image_paths_or_urls), "image paths")
        vectors = backend.embed_image(body.image_paths_or_urls)
        return respond(
            {"dim": int(vectors.shape[1]), "vectors": vectors.tolist()},
            "image_embed",
        )

    return app
