"""Pretrained-model backend.

Loads real checkpoints when they are already cached locally and serves
them behind the same interface as the deterministic backend. Nothing here
downloads weights: the sidecar must stay usable in offline environments,
so absence of a local cache means the caller falls back to the
deterministic backend.

Exact pinned revisions of the reference models are not recoverable, which
is why every response carries its model identifier for provenance.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np

from .deterministic import DeterministicBackend
from .errors import BackendError, InputError
from .textfeat import EMBED_DTYPE

logger = logging.getLogger(__name__)

DEFAULT_MODEL_IDS = {
    "joint_embed_text": "sentence-transformers/all-mpnet-base-v2",
    "qa_embed": "sentence-transformers/multi-qa-mpnet-base-cos-v1",
    "mlm": "distilbert-base-uncased",
}


def _cache_dir() -> Path:
    return Path(os.environ.get("HF_HOME", Path.home() / ".cache" / "huggingface"))


def transformers_available() -> bool:
    """True when a local weight cache exists and the libraries import."""
    if not _cache_dir().is_dir():
        return False
    try:
        import sentence_transformers  # noqa: F401
        import transformers  # noqa: F401
    except ImportError:
        return False
    return True


class TransformersBackend:
    """Serves embeddings and masked fills from locally cached checkpoints.

    POS tagging and image embedding reuse the deterministic implementations
    (the reference taggers and image encoders are not distributed through
    the same hub), so the advertised capability set stays complete.
    """

    backend_id = "transformers-local/0.1.0"

    def __init__(self, model_overrides: dict[str, str] | None = None):
        ids = dict(DEFAULT_MODEL_IDS)
        ids.update(model_overrides or {})
        self._fallback = DeterministicBackend()
        try:
            from sentence_transformers import SentenceTransformer
            from transformers import pipeline
        except ImportError as exc:
            raise BackendError(f"transformers backend unavailable: {exc}") from exc
        try:
            self._sentence = SentenceTransformer(
                ids["joint_embed_text"], local_files_only=True
            )
            self._qa = SentenceTransformer(ids["qa_embed"], local_files_only=True)
            self._mlm = pipeline(
                "fill-mask", model=ids["mlm"], model_kwargs={"local_files_only": True}
            )
        except Exception as exc:
            raise BackendError(
                f"could not load cached models ({exc}); "
                "use the deterministic backend or populate the local cache"
            ) from exc
        self.model_ids = {
            "joint_embed_text": ids["joint_embed_text"],
            "qa_embed": ids["qa_embed"],
            "mlm": ids["mlm"],
            "pos_tag": self._fallback.model_ids["pos_tag"],
            "image_embed": self._fallback.model_ids["image_embed"],
        }
        self.dims = {
            "joint_embed_text": int(self._sentence.get_sentence_embedding_dimension()),
            "qa_embed": int(self._qa.get_sentence_embedding_dimension()),
            "image_embed": self._fallback.dims["image_embed"],
        }

    def embed_text(self, texts: list[str], space: str) -> np.ndarray:
        for text in texts:
            if not text.strip():
                raise InputError(f"cannot embed a blank sentence: {text!r}")
        if space in ("joint", "sentence"):
            model = self._sentence
        elif space in ("qa_question", "qa_answer"):
            model = self._qa
        else:
            raise InputError(f"unknown space {space!r}")
        vectors = model.encode(
            list(texts), convert_to_numpy=True, show_progress_bar=False
        )
        return np.asarray(vectors, dtype=EMBED_DTYPE)

    def mlm_fill(
        self, text: str, mask_word_index: int, top_k: int
    ) -> tuple[float, list[tuple[str, float]]]:
        words = text.split()
        if not 0 <= mask_word_index < len(words):
            raise InputError(
                f"mask_word_index {mask_word_index} out of range for "
                f"{len(words)} words"
            )
        if top_k < 1:
            raise InputError(f"top_k must be >= 1, got {top_k}")
        original = words[mask_word_index]
        masked = list(words)
        masked[mask_word_index] = self._mlm.tokenizer.mask_token
        outputs = self._mlm(" ".join(masked), top_k=max(top_k, 50))
        candidates = [
            (out["token_str"].strip(), float(np.log(out["score"])))
            for out in outputs
        ]
        lookup = {word: lp for word, lp in candidates}
        floor = min(lp for _, lp in candidates) - 1.0
        original_log_prob = lookup.get(original.lower(), floor)
        return original_log_prob, candidates[:top_k]

    def pos_tag(self, texts: list[str]) -> list[list[tuple[str, str]]]:
        return self._fallback.pos_tag(texts)

    def embed_image(self, paths: list[str]) -> np.ndarray:
        return self._fallback.embed_image(paths)
