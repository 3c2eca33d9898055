"""Deterministic text featurization for the fallback backend.

Sentences embed as the concatenation of a hashed word-unigram block, a
hashed character-trigram block, and one shared offset coordinate, each
L2-normalized before weighting. The offset coordinate gives every vector a
common component, which is the anisotropy real sentence encoders exhibit;
its weight is calibrated so a noun-swap task pair like "Cook Ham" /
"Cook Lamb" lands at the similarity the reference sentence encoder reports
for it (about 0.86).

Under this construction the cosine of two sentences is

    (OFFSET_WEIGHT^2 + cos_unigram + cos_trigram) / (OFFSET_WEIGHT^2 + 2)

whenever the hashed blocks are collision-free, so the calibration below is
exact arithmetic, not a fit.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import InputError

_WORD_RE = re.compile(r"[a-z0-9']+")

# solves (0.5 + 0.53452 + w) / (2 + w) = 0.86 for the Cook Ham / Cook Lamb
# pair, whose unigram cosine is 1/2 and trigram cosine is 4/sqrt(56)
OFFSET_WEIGHT_SQ = 4.8963
EMBED_DTYPE = np.float32


def fnv1a64(data: bytes) -> int:
    value = 0xCBF29CE484222325
    for byte in data:
        value ^= byte
        value = (value * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return value


def word_tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _trigrams(word: str) -> list[str]:
    padded = f"^{word}$"
    if len(padded) <= 3:
        return [padded]
    return [padded[i : i + 3] for i in range(len(padded) - 2)]


def _hashed_block(features: list[str], buckets: int, salt: str) -> np.ndarray:
    block = np.zeros(buckets, dtype=np.float64)
    for feature in features:
        block[fnv1a64(f"{salt}\x1f{feature}".encode("utf-8")) % buckets] += 1.0
    norm = np.linalg.norm(block)
    if norm > 0:
        block /= norm
    return block


def embed_sentence(text: str, dim: int, salt: str) -> np.ndarray:
    """One deterministic unit vector per sentence; raises on blank input."""
    tokens = word_tokens(text)
    if not tokens:
        raise InputError(f"cannot embed a blank sentence: {text!r}")
    uni_buckets = (dim - 1) // 2
    tri_buckets = dim - 1 - uni_buckets
    trigrams = [gram for token in tokens for gram in _trigrams(token)]
    vector = np.empty(dim, dtype=np.float64)
    vector[0] = np.sqrt(OFFSET_WEIGHT_SQ)
    vector[1 : 1 + uni_buckets] = _hashed_block(tokens, uni_buckets, salt + ":uni")
    vector[1 + uni_buckets :] = _hashed_block(trigrams, tri_buckets, salt + ":tri")
    vector /= np.linalg.norm(vector)
    return vector.astype(EMBED_DTYPE)


def embed_sentences(texts: list[str], dim: int, salt: str) -> np.ndarray:
    return np.stack([embed_sentence(text, dim, salt) for text in texts])
