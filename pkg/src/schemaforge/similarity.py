"""Task-to-task similarity: textual and visual channels, and source selection.

The textual channel compares sentence embeddings of the raw task names.  The
visual channel compares each task's normalized mean image embedding; it is
absent (not zero) for tasks without images, in which case the combined score
falls back to the textual one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import (
    EMBED_DTYPE,
    TaskRecord,
    default_embeddings_path,
    read_embedding_file,
)
from .errors import DataError, ProviderError
from .scoring import CAP_IMAGE_EMBED, ScorerProvider, cosine

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimilarityScore:
    """Textual, optional visual, and combined task similarity."""

    g_txt: float
    g_vis: float | None
    g: float

    def __post_init__(self) -> None:
        expected = self.g_txt if self.g_vis is None else max(self.g_txt, self.g_vis)
        if self.g != expected:
            raise DataError(
                f"similarity score g={self.g} does not combine g_txt={self.g_txt} "
                f"and g_vis={self.g_vis}"
            )

    def to_json_dict(self) -> dict:
        return {"g_txt": self.g_txt, "g_vis": self.g_vis, "g": self.g}


class TaskImageRegistry:
    """Per-task image embeddings for the visual similarity channel."""

    def __init__(self, vectors_by_task: Mapping[str, np.ndarray] | None = None):
        self._by_task: dict[str, np.ndarray] = {}
        for task_id, vectors in (vectors_by_task or {}).items():
            self.add(task_id, vectors)

    def add(self, task_id: str, vectors: np.ndarray) -> None:
        vectors = np.asarray(vectors, dtype=EMBED_DTYPE)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise DataError(f"task {task_id!r}: image vectors must be a non-empty 2-D array")
        self._by_task[task_id] = vectors

    def __contains__(self, task_id: str) -> bool:
        return task_id in self._by_task

    def __len__(self) -> int:
        return len(self._by_task)

    def mean_embedding(self, task_id: str) -> np.ndarray | None:
        """Normalized mean of the task's image set; None when the task has
        no images."""
        vectors = self._by_task.get(task_id)
        if vectors is None:
            return None
        mean = np.asarray(vectors, dtype=np.float64).mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm == 0.0:
            raise DataError(f"task {task_id!r}: mean image embedding has zero norm")
        return mean / norm


def load_task_images(
    path: str | Path, provider: ScorerProvider | None = None
) -> TaskImageRegistry:
    """Read a task-image manifest: one JSON object per line with ``task_id``
    plus either ``embedding_refs`` into a companion embedding file or
    ``images`` paths to embed through the provider."""
    path = Path(path)
    registry = TaskImageRegistry()
    rows: np.ndarray | None = None
    companion = default_embeddings_path(path)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
        task_id = obj.get("task_id")
        if not task_id:
            raise DataError(f"{path}:{lineno}: missing task_id")
        refs = obj.get("embedding_refs")
        if refs is not None:
            if rows is None:
                rows = read_embedding_file(companion)
            bad = [r for r in refs if not 0 <= r < rows.shape[0]]
            if bad:
                raise DataError(
                    f"{path}:{lineno}: embedding_refs {bad} out of range for "
                    f"{rows.shape[0]} rows"
                )
            registry.add(task_id, rows[refs])
            continue
        images = obj.get("images")
        if not images:
            raise DataError(
                f"{path}:{lineno}: task {task_id!r} needs images or embedding_refs"
            )
        if provider is None or CAP_IMAGE_EMBED not in provider.capabilities:
            raise ProviderError(
                f"{path}:{lineno}: task {task_id!r} lists raw images but no "
                "image-capable provider is configured"
            )
        registry.add(task_id, provider.embed_image(images))
    return registry


def g_txt(task_a: TaskRecord, task_b: TaskRecord, provider: ScorerProvider) -> float:
    """Cosine similarity of the sentence embeddings of the raw task names."""
    vectors = provider.embed_text([task_a.name, task_b.name], space="sentence")
    return cosine(vectors[0], vectors[1])


def g_vis(
    task_a: TaskRecord,
    task_b: TaskRecord,
    images: TaskImageRegistry | None,
) -> float | None:
    """Cosine of the tasks' normalized mean image embeddings; None when
    either task has no images."""
    if images is None:
        return None
    mean_a = images.mean_embedding(task_a.task_id)
    mean_b = images.mean_embedding(task_b.task_id)
    if mean_a is None or mean_b is None:
        return None
    return cosine(mean_a, mean_b)


def g(
    task_a: TaskRecord,
    task_b: TaskRecord,
    provider: ScorerProvider,
    images: TaskImageRegistry | None = None,
) -> SimilarityScore:
    """Combined task similarity: the better of the two channels."""
    txt = g_txt(task_a, task_b, provider)
    vis = g_vis(task_a, task_b, images)
    return SimilarityScore(g_txt=txt, g_vis=vis, g=txt if vis is None else max(txt, vis))


def top_r_sources(
    target_task: TaskRecord,
    known_tasks: Iterable[TaskRecord],
    r: int,
    provider: ScorerProvider,
    images: TaskImageRegistry | None = None,
) -> list[tuple[TaskRecord, SimilarityScore]]:
    """The R most similar known tasks, descending, ties by task_id; the
    target itself never appears."""
    if r < 1:
        raise DataError(f"source count must be >= 1, got {r}")
    candidates = [t for t in known_tasks if t.task_id != target_task.task_id]
    if not candidates:
        raise DataError(
            f"no known tasks available as edit sources for {target_task.task_id!r}"
        )
    scored = [(task, g(target_task, task, provider, images)) for task in candidates]
    scored.sort(key=lambda e: (-e[1].g, e[0].task_id))
    return scored[:r]
