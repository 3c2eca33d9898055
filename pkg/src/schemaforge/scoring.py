"""Matching function and model-backed judgments behind one provider abstraction.

Three interchangeable backends:

- :class:`SyntheticProvider` — deterministic hashed bag-of-words embeddings,
  table-driven masked fill, and a closed-lexicon tagger.  No model downloads;
  the backend every test and desk-scale experiment runs on.
- :class:`FileBackedProvider` — replays judgments recorded in a fixture file.
- :class:`SidecarProvider` — HTTP client for the inference sidecar, with an
  on-disk response cache so reruns are deterministic and offline-replayable.

All backends obey the determinism contract: identical inputs yield
bit-identical outputs across runs and thread schedules.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import EMBED_DTYPE, ClipRecord, StepSentence
from .errors import DataError, ProviderError

logger = logging.getLogger(__name__)

CAP_JOINT_EMBED = "joint_embed_text"
CAP_QA_EMBED = "qa_embed"
CAP_MLM = "mlm"
CAP_POS = "pos_tag"
CAP_IMAGE_EMBED = "image_embed"

_TEXT_SPACES = ("joint", "sentence", "qa_question", "qa_answer")
_SPACE_CAPABILITY = {
    "joint": CAP_JOINT_EMBED,
    "sentence": CAP_JOINT_EMBED,
    "qa_question": CAP_QA_EMBED,
    "qa_answer": CAP_QA_EMBED,
}

NOUN_TAGS = ("NN", "NNS", "NNP", "NNPS")

_WORD_RE = re.compile(r"[a-z0-9']+")


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; exact 1.0 for bit-identical inputs.

    Symmetric by construction.  Raises DataError on dimension mismatch or a
    zero-norm input.
    """
    u64 = np.asarray(u, dtype=np.float64)
    v64 = np.asarray(v, dtype=np.float64)
    if u64.shape != v64.shape:
        raise DataError(f"cosine: dimension mismatch {u64.shape} vs {v64.shape}")
    nu = math.sqrt(float(np.dot(u64, u64)))
    nv = math.sqrt(float(np.dot(v64, v64)))
    if nu == 0.0 or nv == 0.0:
        raise DataError("cosine: zero-norm vector")
    if np.array_equal(u64, v64):
        return 1.0
    value = float(np.dot(u64, v64)) / (nu * nv)
    return min(1.0, max(-1.0, value))


def dot_score(u: np.ndarray, v: np.ndarray) -> float:
    """Raw inner product; the unnormalized alternative behind ``scoring.normalize``."""
    u64 = np.asarray(u, dtype=np.float64)
    v64 = np.asarray(v, dtype=np.float64)
    if u64.shape != v64.shape:
        raise DataError(f"dot: dimension mismatch {u64.shape} vs {v64.shape}")
    return float(np.dot(u64, v64))


def match_score(clip: ClipRecord, step: StepSentence, normalize: bool = True) -> float:
    """Video-text matching score between a clip and a step sentence."""
    if step.embedding is None:
        raise DataError(f"step {step.step_id!r} has no embedding")
    if clip.embedding.shape != step.embedding.shape:
        raise DataError(
            f"joint-space mismatch: clip {clip.clip_id!r} dim {clip.embedding.shape[0]} "
            f"vs step {step.step_id!r} dim {step.embedding.shape[0]}"
        )
    return cosine(clip.embedding, step.embedding) if normalize else dot_score(
        clip.embedding, step.embedding
    )


@dataclass(frozen=True)
class MaskedFillResult:
    """Candidates for a masked slot plus the original word's log-probability."""

    candidates: tuple[tuple[str, float], ...]
    original_log_prob: float

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ProviderError("masked fill returned no candidates")
        probs = [lp for _, lp in self.candidates]
        if not all(math.isfinite(lp) for lp in probs) or not math.isfinite(
            self.original_log_prob
        ):
            raise ProviderError("masked-fill log-probs must be finite")
        if any(a < b for a, b in zip(probs, probs[1:])):
            raise ProviderError("masked-fill candidates must be sorted by log-prob")

    def top_word(self) -> str:
        return self.candidates[0][0]


class ScorerProvider:
    """Pluggable source of embedding, masked-LM, POS, and image judgments.

    Subclasses fill ``capabilities`` and the raw methods; callers use the
    module-level ops (``qa_score``, ``masked_fill``, ``pos_tag``) or the
    batch methods directly.  Batch semantics are identical to element-wise
    calls.
    """

    capabilities: frozenset[str] = frozenset()
    provider_id = "abstract"

    def require(self, capability: str) -> None:
        if capability not in self.capabilities:
            raise ProviderError(
                f"provider {self.provider_id!r} lacks capability {capability!r}"
            )

    def embed_text(self, texts: Sequence[str], space: str) -> np.ndarray:
        raise NotImplementedError

    def mlm_fill(self, text: str, mask_word_index: int, top_k: int = 20) -> MaskedFillResult:
        raise NotImplementedError

    def pos_tag_batch(self, texts: Sequence[str]) -> list[list[tuple[str, str]]]:
        raise NotImplementedError

    def embed_image(self, paths: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def _check_space(self, space: str) -> None:
        if space not in _TEXT_SPACES:
            raise ProviderError(f"unknown embedding space {space!r}")
        self.require(_SPACE_CAPABILITY[space])


def qa_score(provider: ScorerProvider, question: str, answer: str) -> float:
    """Compatibility between a question and an answer: cosine of their
    separately embedded representations."""
    vectors_q = provider.embed_text([question], space="qa_question")
    vectors_a = provider.embed_text([answer], space="qa_answer")
    return cosine(vectors_q[0], vectors_a[0])


def masked_fill(
    provider: ScorerProvider, prompt: str, mask_index: int, top_k: int = 20
) -> MaskedFillResult:
    """Candidates for the masked whole-word slot ``mask_index`` of ``prompt``."""
    words = prompt.split()
    if mask_index < 0 or mask_index >= len(words):
        raise DataError(f"mask index {mask_index} out of range for {len(words)} words")
    return provider.mlm_fill(prompt, mask_index, top_k=top_k)


def pos_tag(provider: ScorerProvider, sentence: str) -> list[tuple[str, str]]:
    """One (surface, Penn tag) pair per whitespace-delimited word."""
    if not sentence.strip():
        raise DataError("cannot POS-tag an empty sentence")
    return provider.pos_tag_batch([sentence])[0]


# ---------------------------------------------------------------------------
# synthetic backend


def fnv1a64(data: str) -> int:
    """64-bit FNV-1a hash of a UTF-8 string."""
    h = 0xCBF29CE484222325
    for byte in data.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


# Closed lexicon for the synthetic tagger: enough coverage for the shipped
# demos and fixtures; unknown words tag as "X".
DEFAULT_LEXICON: dict[str, str] = {
    "a": "DT", "an": "DT", "the": "DT", "this": "DT", "that": "DT",
    "in": "IN", "on": "IN", "from": "IN", "with": "IN", "under": "IN",
    "into": "IN", "for": "IN", "of": "IN", "over": "IN", "at": "IN",
    "and": "CC", "or": "CC", "your": "PRP$", "its": "PRP$", "it": "PRP",
    "out": "RP", "up": "RP", "new": "JJ", "dirty": "JJ", "particularly": "RB",
    "healthy": "JJ", "long": "JJ", "haired": "JJ", "young": "JJ",
    "balanced": "JJ", "roasting": "JJ", "using": "VBG",
    "bake": "VB", "cook": "VB", "clean": "VB", "trap": "VB", "brush": "VB",
    "wash": "VB", "make": "VB", "fix": "VB", "remove": "VB", "prepare": "VB",
    "transplant": "VB", "build": "VB", "put": "VB", "cut": "VB", "slice": "VB",
    "use": "VB", "fill": "VB", "test": "VB", "comb": "VB", "groom": "VB",
    "bait": "VB", "set": "VB", "insert": "VB", "preheat": "VB", "stir": "VB",
    "chicken": "NN", "ham": "NN", "lamb": "NN", "fish": "NN", "crab": "NN",
    "crabs": "NNS", "fins": "NNS", "shells": "NNS", "kitchen": "NN",
    "shears": "NNS", "scissors": "NNS", "steel": "NN", "guitar": "NN",
    "guitars": "NNS", "violin": "NN", "violins": "NNS", "polish": "NN",
    "oven": "NN", "rat": "NN", "rabbit": "NN", "traps": "NNS", "snap": "NN",
    "cat": "NN", "dog": "NN", "pet": "NN", "toilet": "NN", "flapper": "NN",
    "tree": "NN", "pot": "NN", "fertilizer": "NN", "donuts": "NNS",
    "cookies": "NNS", "disks": "NNS", "squares": "NNS", "bike": "NN",
    "motorcycle": "NN", "chain": "NN", "degreaser": "NN", "towel": "NN",
    "thermometer": "NN", "thigh": "NN", "water": "NN",
    "salt": "NN", "thoroughly": "RB",
}


class LexiconTagger:
    """Closed-lexicon POS tagger: lowercased core word -> tag, else "X"."""

    def __init__(self, lexicon: Mapping[str, str] | None = None):
        self.lexicon = dict(DEFAULT_LEXICON)
        if lexicon:
            self.lexicon.update({k.lower(): v for k, v in lexicon.items()})

    def tag(self, sentence: str) -> list[tuple[str, str]]:
        pairs = []
        for surface in sentence.split():
            core = surface.strip("\"'.,!?;:()[]").lower()
            pairs.append((surface, self.lexicon.get(core, "X")))
        return pairs


MlmTable = Mapping[str | tuple[str, str], str]


class SyntheticProvider(ScorerProvider):
    """Deterministic, oracle-friendly backend with no model downloads.

    Text embeds as an L2-normalized hashed bag-of-words: each lowercased
    token is hashed with 64-bit FNV-1a and counted at ``hash % dim``.  The
    same embedding serves every space, so identical strings always score 1.0
    against themselves.  Masked fill is table-driven: entries map a word (or
    a (prompt-substring, word) pair for context-sensitive cases) to its
    preferred replacement.  Words with a non-trivial table entry report a low
    original log-prob (-5.0); all other words report -1.0.
    """

    capabilities = frozenset(
        {CAP_JOINT_EMBED, CAP_QA_EMBED, CAP_MLM, CAP_POS, CAP_IMAGE_EMBED}
    )
    provider_id = "synthetic"

    TABLE_HIT_LOG_PROB = -5.0
    DEFAULT_LOG_PROB = -1.0
    CANDIDATE_LOG_PROB = -0.5

    def __init__(
        self,
        dim: int = 256,
        lexicon: Mapping[str, str] | None = None,
        mlm_table: MlmTable | None = None,
    ):
        self.dim = dim
        self.tagger = LexiconTagger(lexicon)
        self.mlm_table = dict(mlm_table or {})

    def embed_text(self, texts: Sequence[str], space: str = "joint") -> np.ndarray:
        self._check_space(space)
        out = np.zeros((len(texts), self.dim), dtype=EMBED_DTYPE)
        for i, text in enumerate(texts):
            out[i] = self._embed_one(text)
        return out

    def _embed_one(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dim, dtype=np.float64)
        for token in _tokenize(text):
            counts[fnv1a64(token) % self.dim] += 1.0
        norm = float(np.linalg.norm(counts))
        if norm == 0.0:
            raise ProviderError(f"cannot embed text with no tokens: {text!r}")
        return (counts / norm).astype(EMBED_DTYPE)

    def mlm_fill(self, text: str, mask_word_index: int, top_k: int = 20) -> MaskedFillResult:
        words = text.split()
        if mask_word_index < 0 or mask_word_index >= len(words):
            raise DataError(
                f"mask index {mask_word_index} out of range for {len(words)} words"
            )
        core = words[mask_word_index].strip("\"'.,!?;:()[]").lower()
        replacement = self._lookup_fill(text, core)
        if replacement is not None and replacement != core:
            candidates = (
                (replacement, self.CANDIDATE_LOG_PROB),
                (core, self.TABLE_HIT_LOG_PROB),
            )
            original_lp = self.TABLE_HIT_LOG_PROB
        else:
            candidates = ((core, self.DEFAULT_LOG_PROB),)
            original_lp = self.DEFAULT_LOG_PROB
        return MaskedFillResult(
            candidates=candidates[:top_k], original_log_prob=original_lp
        )

    def _lookup_fill(self, prompt: str, word: str) -> str | None:
        contextual = [
            (ctx, w) for key in self.mlm_table if isinstance(key, tuple)
            for ctx, w in [key] if w == word and ctx.lower() in prompt.lower()
        ]
        if contextual:
            return self.mlm_table[sorted(contextual)[0]]
        return self.mlm_table.get(word)

    def pos_tag_batch(self, texts: Sequence[str]) -> list[list[tuple[str, str]]]:
        for text in texts:
            if not text.strip():
                raise DataError("cannot POS-tag an empty sentence")
        return [self.tagger.tag(text) for text in texts]

    def embed_image(self, paths: Sequence[str]) -> np.ndarray:
        # images have no pixels here; the path string stands in for content
        return self.embed_text([Path(p).stem.replace("_", " ") for p in paths], space="joint")

    def noisy_copy(self, embedding: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
        """A clip embedding: the step embedding plus Gaussian noise of expected
        L2 norm ``sigma`` (relative to the unit-norm source)."""
        if sigma == 0.0:
            return embedding.astype(EMBED_DTYPE).copy()
        noise = rng.normal(0.0, sigma / math.sqrt(self.dim), size=self.dim)
        return (np.asarray(embedding, dtype=np.float64) + noise).astype(EMBED_DTYPE)


# ---------------------------------------------------------------------------
# file-backed backend


class FileBackedProvider(ScorerProvider):
    """Replays judgments recorded in a fixture JSON file.

    Layout: ``{"dim": int, "embed_text": {space: {text: [f32...]}},
    "mlm_fill": {"<text>||<index>": {"original_log_prob": f, "candidates": [[w, lp]...]}},
    "pos_tag": {text: [[surface, tag]...]}, "embed_image": {path: [f32...]}}``.
    Capabilities reflect which sections are present.  A missing record is a
    provider error, never a silent fallback.
    """

    provider_id = "file"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        with open(self.path, "r", encoding="utf-8") as fh:
            self._data = json.load(fh)
        caps = set()
        if "embed_text" in self._data:
            caps |= {CAP_JOINT_EMBED, CAP_QA_EMBED}
        if "mlm_fill" in self._data:
            caps.add(CAP_MLM)
        if "pos_tag" in self._data:
            caps.add(CAP_POS)
        if "embed_image" in self._data:
            caps.add(CAP_IMAGE_EMBED)
        self.capabilities = frozenset(caps)
        self.dim = self._data.get("dim")

    def _record(self, section: str, key: str):
        table = self._data.get(section)
        if table is None or key not in table:
            raise ProviderError(
                f"{self.path}: no recorded {section} response for key {key!r}"
            )
        return table[key]

    def embed_text(self, texts: Sequence[str], space: str = "joint") -> np.ndarray:
        self._check_space(space)
        spaces = self._data["embed_text"]
        table = spaces.get(space, spaces.get("joint", {}))
        vectors = []
        for text in texts:
            if text not in table:
                raise ProviderError(
                    f"{self.path}: no recorded embedding for {text!r} in space {space!r}"
                )
            vectors.append(np.asarray(table[text], dtype=EMBED_DTYPE))
        return np.stack(vectors)

    def mlm_fill(self, text: str, mask_word_index: int, top_k: int = 20) -> MaskedFillResult:
        self.require(CAP_MLM)
        rec = self._record("mlm_fill", f"{text}||{mask_word_index}")
        return MaskedFillResult(
            candidates=tuple((w, float(lp)) for w, lp in rec["candidates"][:top_k]),
            original_log_prob=float(rec["original_log_prob"]),
        )

    def pos_tag_batch(self, texts: Sequence[str]) -> list[list[tuple[str, str]]]:
        self.require(CAP_POS)
        out = []
        for text in texts:
            if not text.strip():
                raise DataError("cannot POS-tag an empty sentence")
            out.append([(s, t) for s, t in self._record("pos_tag", text)])
        return out

    def embed_image(self, paths: Sequence[str]) -> np.ndarray:
        self.require(CAP_IMAGE_EMBED)
        return np.stack(
            [np.asarray(self._record("embed_image", p), dtype=EMBED_DTYPE) for p in paths]
        )


# ---------------------------------------------------------------------------
# sidecar backend


class SidecarProvider(ScorerProvider):
    """HTTP client for the inference sidecar.

    Responses are cached on disk keyed by (endpoint, request hash) so reruns
    are deterministic and replayable offline.  Idempotent requests retry up
    to ``retries`` times with exponential backoff; concurrent calls are
    bounded by ``max_inflight``.
    """

    capabilities = frozenset(
        {CAP_JOINT_EMBED, CAP_QA_EMBED, CAP_MLM, CAP_POS, CAP_IMAGE_EMBED}
    )
    provider_id = "sidecar"

    def __init__(
        self,
        url: str,
        cache_dir: str | Path | None = None,
        max_inflight: int = 8,
        retries: int = 3,
        timeout: float = 30.0,
        backoff_s: float = 0.2,
    ):
        self.url = url.rstrip("/")
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.retries = retries
        self.timeout = timeout
        self.backoff_s = backoff_s
        self._gate = threading.BoundedSemaphore(max_inflight)
        self._session = None
        self._session_lock = threading.Lock()

    def _request(self, endpoint: str, body: dict) -> dict:
        payload = json.dumps(body, sort_keys=True, ensure_ascii=False)
        cache_path = None
        if self.cache_dir:
            key = hashlib.sha256((endpoint + "\n" + payload).encode("utf-8")).hexdigest()
            cache_path = self.cache_dir / f"{key}.json"
            if cache_path.exists():
                with open(cache_path, "r", encoding="utf-8") as fh:
                    return json.load(fh)
        response = self._post(endpoint, payload)
        if cache_path:
            tmp = cache_path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(response, fh, sort_keys=True)
            tmp.replace(cache_path)
        return response

    def _post(self, endpoint: str, payload: str) -> dict:
        import requests

        with self._session_lock:
            if self._session is None:
                self._session = requests.Session()
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = self._session.post(
                        self.url + endpoint,
                        data=payload.encode("utf-8"),
                        headers={"Content-Type": "application/json"},
                        timeout=self.timeout,
                    )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code < 300:
                return resp.json()
            message = _error_message(resp)
            if resp.status_code < 500:
                raise ProviderError(f"sidecar {endpoint} failed ({resp.status_code}): {message}")
            last_error = ProviderError(
                f"sidecar {endpoint} failed ({resp.status_code}): {message}"
            )
        raise ProviderError(
            f"sidecar {endpoint} unreachable after {self.retries + 1} attempts: {last_error}"
        )

    def embed_text(self, texts: Sequence[str], space: str = "joint") -> np.ndarray:
        self._check_space(space)
        resp = self._request("/v1/embed_text", {"texts": list(texts), "space": space})
        vectors = np.asarray(resp["vectors"], dtype=EMBED_DTYPE)
        if vectors.shape != (len(texts), resp["dim"]):
            raise ProviderError(
                f"sidecar returned {vectors.shape} vectors for {len(texts)} texts of dim {resp['dim']}"
            )
        return vectors

    def mlm_fill(self, text: str, mask_word_index: int, top_k: int = 20) -> MaskedFillResult:
        resp = self._request(
            "/v1/mlm_fill",
            {"text": text, "mask_word_index": mask_word_index, "top_k": top_k},
        )
        return MaskedFillResult(
            candidates=tuple(
                (c["word"], float(c["log_prob"])) for c in resp["candidates"]
            ),
            original_log_prob=float(resp["original_log_prob"]),
        )

    def pos_tag_batch(self, texts: Sequence[str]) -> list[list[tuple[str, str]]]:
        for text in texts:
            if not text.strip():
                raise DataError("cannot POS-tag an empty sentence")
        resp = self._request("/v1/pos_tag", {"texts": list(texts)})
        return [[(s, t) for s, t in tags] for tags in resp["tags"]]

    def embed_image(self, paths: Sequence[str]) -> np.ndarray:
        resp = self._request("/v1/embed_image", {"image_paths_or_urls": list(paths)})
        return np.asarray(resp["vectors"], dtype=EMBED_DTYPE)


def _error_message(resp) -> str:
    try:
        return resp.json().get("error", resp.text[:200])
    except Exception:
        return resp.text[:200]
