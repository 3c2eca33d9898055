"""Weight-free fallback backend.

Serves the full wire protocol deterministically with no model downloads:
text embeddings come from the hashed featurizer, masked fills from a
curated association table over instructional vocabulary, POS tags from a
rule tagger tuned for imperative how-to sentences, and image embeddings
from content hashes. Every operation is a pure function of its inputs.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path

import numpy as np

from .errors import InputError
from .textfeat import EMBED_DTYPE, embed_sentences, fnv1a64, word_tokens

TEXT_DIM = 768
IMAGE_DIM = 512

# each text space hashes with its own salt so vectors from different
# spaces are not comparable, mimicking distinct models; the two QA spaces
# share one so questions and answers live in a common space
_SPACE_SALTS = {
    "joint": "text:joint",
    "sentence": "text:sentence",
    "qa_question": "text:qa",
    "qa_answer": "text:qa",
}

# context word -> plausible fills for a masked noun nearby, most likely
# first; drawn from common how-to vocabulary
_ASSOCIATIONS: dict[str, list[str]] = {
    "crab": ["shells", "claws", "legs", "meat"],
    "crabs": ["shells", "claws", "legs", "meat"],
    "fish": ["fins", "scales", "bones", "fillets"],
    "shears": ["shells", "stems", "branches"],
    "scissors": ["paper", "shells", "thread"],
    "cut": ["pieces", "slices", "strips"],
    "slice": ["disks", "rounds", "pieces"],
    "oven": ["ham", "bread", "tray", "dish"],
    "ham": ["oven", "glaze", "slices"],
    "lamb": ["oven", "rack", "chops"],
    "bake": ["bread", "cookies", "dough"],
    "guitar": ["strings", "polish", "neck"],
    "violin": ["strings", "bow", "polish"],
    "polish": ["guitars", "violins", "shoes"],
    "toilet": ["flapper", "tank", "valve", "seat"],
    "flapper": ["toilet", "tank", "chain"],
    "donuts": ["disks", "glaze", "rings"],
    "cookies": ["squares", "dough", "sheets"],
    "bike": ["chain", "degreaser", "tires"],
    "motorcycle": ["towel", "chain", "engine"],
    "chain": ["degreaser", "lube", "links"],
    "traps": ["bait", "cheese", "springs"],
    "trap": ["bait", "cheese", "springs"],
    "pet": ["fur", "coat", "hair"],
    "brush": ["fur", "coat", "teeth"],
    "pot": ["fertilizer", "soil", "water"],
    "tree": ["roots", "branches", "soil"],
    "kitchen": ["shears", "knife", "counter"],
    "prepare": ["ingredients", "meal", "dish"],
    "clean": ["surface", "dirt", "grime"],
    "wash": ["soap", "water", "rinse"],
    "fill": ["water", "soil", "mixture"],
}

# low-scoring generic fills so every prompt yields candidates
_FALLBACK_FILLS = [
    "piece", "part", "item", "tool", "surface", "edge", "top", "bottom",
    "side", "cover", "lid", "handle", "layer", "mixture", "water", "cloth",
    "brush", "knife", "bowl", "pan", "board", "towel", "container", "rack",
]

_STOPWORDS = frozenset({
    "a", "an", "the", "and", "or", "but", "to", "of", "in", "on", "at",
    "by", "for", "from", "with", "into", "out", "up", "down", "off",
    "your", "their", "its", "his", "her", "my", "our", "you", "it",
    "is", "are", "was", "were", "be", "been", "how", "what", "when",
    "using", "this", "that", "these", "those",
})

_MASK_TOKEN = "[MASK]"

# Penn-tagset rule tagger tables
_CLOSED_CLASS = {
    "the": "DT", "a": "DT", "an": "DT", "this": "DT", "that": "DT",
    "these": "DT", "those": "DT",
    "in": "IN", "on": "IN", "from": "IN", "with": "IN", "of": "IN",
    "for": "IN", "into": "IN", "at": "IN", "by": "IN", "under": "IN",
    "over": "IN", "until": "IN", "after": "IN", "before": "IN",
    "and": "CC", "or": "CC", "but": "CC",
    "to": "TO",
    "your": "PRP$", "their": "PRP$", "its": "PRP$", "his": "PRP$",
    "her": "PRP$", "my": "PRP$", "our": "PRP$",
    "you": "PRP", "it": "PRP", "they": "PRP", "we": "PRP", "i": "PRP",
    "is": "VBZ", "are": "VBP", "was": "VBD", "were": "VBD",
    "be": "VB", "been": "VBN",
    "not": "RB", "very": "RB", "too": "RB", "so": "RB",
    "how": "WRB", "when": "WRB", "where": "WRB",
    "out": "RP", "up": "RP", "off": "RP", "down": "RP",
}

_IMPERATIVE_VERBS = frozenset({
    "add", "bait", "bake", "boil", "brush", "build", "chop", "clean",
    "comb", "cook", "cut", "drain", "dry", "fill", "fix", "grill",
    "groom", "heat", "install", "make", "mix", "place", "polish", "pour",
    "prepare", "put", "remove", "repair", "replace", "rinse", "serve",
    "set", "slice", "stir", "test", "transplant", "trap", "use", "wash",
    "wipe",
})

_ADJECTIVES = frozenset({
    "new", "dirty", "clean", "healthy", "long", "haired", "balanced",
    "young", "fresh", "dry", "wet", "sharp", "small", "large", "hot",
    "cold", "soft",
})


def _core(word: str) -> str:
    tokens = word_tokens(word)
    return tokens[0] if tokens else ""


class DeterministicBackend:
    """Pure-function implementations of every advertised capability."""

    backend_id = "deterministic-fallback/0.1.0"
    model_ids = {
        "joint_embed_text": "deterministic/text-encoder-v1:joint",
        "qa_embed": "deterministic/text-encoder-v1:qa",
        "mlm": "deterministic/association-mlm-v1",
        "pos_tag": "deterministic/rule-pos-tagger-v1",
        "image_embed": "deterministic/image-encoder-v1",
    }
    dims = {
        "joint_embed_text": TEXT_DIM,
        "qa_embed": TEXT_DIM,
        "image_embed": IMAGE_DIM,
    }

    def embed_text(self, texts: list[str], space: str) -> np.ndarray:
        salt = _SPACE_SALTS.get(space)
        if salt is None:
            raise InputError(
                f"unknown space {space!r}; expected one of {sorted(_SPACE_SALTS)}"
            )
        return embed_sentences(texts, TEXT_DIM, salt)

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
        masked_surface = words[mask_word_index]
        original = "" if masked_surface == _MASK_TOKEN else _core(masked_surface)
        context = {
            _core(w) for i, w in enumerate(words) if i != mask_word_index
        }
        context -= _STOPWORDS | {""}

        logits: dict[str, float] = {}
        for keyword in sorted(context):
            for rank, fill in enumerate(_ASSOCIATIONS.get(keyword, [])):
                logits[fill] = logits.get(fill, 0.0) + 1.0 / (1 + rank)
        for rank, fill in enumerate(_FALLBACK_FILLS):
            # strictly below any association hit, mutually ordered
            logits.setdefault(fill, -1.0 - 0.01 * rank)
        if original:
            logits.setdefault(original, -1.0)

        total = math.log(sum(math.exp(v) for v in logits.values()))
        log_probs = {word: value - total for word, value in logits.items()}
        ranked = sorted(log_probs.items(), key=lambda e: (-e[1], e[0]))
        if original:
            original_log_prob = log_probs[original]
        else:
            # bare [MASK] slot: report a floor strictly under every candidate
            original_log_prob = min(log_probs.values()) - 1.0
        return original_log_prob, ranked[:top_k]

    def pos_tag(self, texts: list[str]) -> list[list[tuple[str, str]]]:
        return [self._tag_sentence(text) for text in texts]

    def _tag_sentence(self, text: str) -> list[tuple[str, str]]:
        words = text.split()
        if not words:
            raise InputError("cannot POS-tag an empty sentence")
        tagged: list[tuple[str, str]] = []
        previous = ""
        for surface in words:
            tag = self._tag_word(surface, previous)
            tagged.append((surface, tag))
            previous = tag
        return tagged

    def _tag_word(self, surface: str, previous: str) -> str:
        core = _core(surface)
        if not core:
            return "SYM"
        if core[0].isdigit():
            return "CD"
        if core in _CLOSED_CLASS:
            return _CLOSED_CLASS[core]
        nominal_context = previous in ("DT", "PRP$", "JJ", "CD")
        if core in _IMPERATIVE_VERBS and not nominal_context:
            return "VB"
        if core in _ADJECTIVES:
            return "JJ"
        if core.endswith("ly"):
            return "RB"
        if core.endswith("ing") and not nominal_context:
            return "VBG"
        if core.endswith("ed") and not nominal_context:
            return "VBD"
        if core.endswith("s") and not core.endswith("ss"):
            return "NNS"
        return "NN"

    def embed_image(self, paths: list[str]) -> np.ndarray:
        if not paths:
            raise InputError("image_paths_or_urls must be non-empty")
        return np.stack([self._embed_one_image(p) for p in paths])

    def _embed_one_image(self, path: str) -> np.ndarray:
        # local files embed by content, other identifiers by name, so two
        # copies of one image agree regardless of filename
        candidate = Path(path)
        try:
            payload = candidate.read_bytes() if candidate.is_file() else None
        except OSError:
            payload = None
        if payload is None:
            payload = f"image:{path}".encode("utf-8")
        digest = hashlib.sha256(payload).digest()
        seed = fnv1a64(digest)
        rng = np.random.default_rng(seed)
        vector = rng.standard_normal(IMAGE_DIM)
        vector /= np.linalg.norm(vector)
        return vector.astype(EMBED_DTYPE)
