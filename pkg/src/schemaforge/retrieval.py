"""Video ranking for a task query.

Three modes:

- ``global``: average clip-to-query similarity over the whole video.
- ``step_agg``: blend the global score with a schema-guided score that
  aligns each schema step to its best clip.
- ``ier``: for tasks without a schema of their own, borrow the most similar
  tasks' schemas, edit them toward the query, and aggregate the edited
  schemas' step scores weighted by task similarity.

All reductions run in a fixed order (corpus order for clips and videos,
schema order for steps) so identical inputs produce byte-identical ranked
lists regardless of worker count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import (
    Schema,
    SchemaLibrary,
    TaskRecord,
    TaskRegistry,
    VideoCorpus,
    VideoRecord,
)
from .editing import EditParams, edit_schema
from .errors import DataError
from .scoring import ScorerProvider, cosine, dot_score
from .similarity import TaskImageRegistry, top_r_sources

logger = logging.getLogger(__name__)

MODES = ("global", "step_agg", "ier")


@dataclass(frozen=True)
class RetrievalParams:
    """Ranking knobs; ``lambda_`` blends global and step-aggregated scores."""

    lambda_: float = 0.6
    r: int = 1
    normalize: bool = True
    normalize_g: bool = False
    explain_top_k: int = 5

    def __post_init__(self) -> None:
        if not 0 <= self.lambda_ <= 1:
            raise DataError(f"lambda must be in [0, 1], got {self.lambda_}")
        if self.r < 1:
            raise DataError(f"source count must be >= 1, got {self.r}")
        if self.explain_top_k < 0:
            raise DataError("explain_top_k must be >= 0")

    def as_dict(self) -> dict:
        return {
            "lambda": self.lambda_,
            "r": self.r,
            "normalize": self.normalize,
            "normalize_g": self.normalize_g,
            "explain_top_k": self.explain_top_k,
        }


@dataclass
class RankedList:
    """A total order over the pool with per-video score components.

    ``alignments`` maps a top-ranked video to its per-step best-clip list;
    ``component_scores`` maps every video to its global score and per-source
    step-aggregation scores.
    """

    query_task_id: str
    mode: str
    entries: tuple[tuple[str, float], ...]
    component_scores: dict[str, dict] = field(default_factory=dict)
    alignments: dict[str, list[dict]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.entries = tuple((vid, float(score)) for vid, score in self.entries)
        if not self.entries:
            raise DataError("ranked list must cover a non-empty pool")
        ids = [vid for vid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("ranked list repeats a video")
        for (id_a, score_a), (id_b, score_b) in zip(self.entries, self.entries[1:]):
            if score_a < score_b or (score_a == score_b and id_a > id_b):
                raise DataError("ranked list is not sorted by (score desc, video_id)")

    def video_ids(self) -> list[str]:
        return [vid for vid, _ in self.entries]

    def to_json_dict(self) -> dict:
        results = []
        for video_id, score in self.entries:
            row: dict = {"video_id": video_id, "score": score}
            row.update(self.component_scores.get(video_id, {}))
            if video_id in self.alignments:
                row["alignment"] = self.alignments[video_id]
            results.append(row)
        return {"query": self.query_task_id, "mode": self.mode, "results": results}


def _f(u: np.ndarray, v: np.ndarray, normalize: bool) -> float:
    return cosine(u, v) if normalize else dot_score(u, v)


def m_task(query_embedding: np.ndarray, video: VideoRecord, normalize: bool = True) -> float:
    """Global matching: mean similarity between the query text and every clip."""
    total = 0.0
    for clip in video.clips:
        total += _f(clip.embedding, query_embedding, normalize)
    return total / len(video.clips)


def m_step_with_alignment(
    schema: Schema, video: VideoRecord, normalize: bool = True
) -> tuple[float, list[dict]]:
    """Step aggregation plus the per-step best-clip alignment."""
    if not schema.entries:
        raise DataError("cannot step-aggregate an empty schema")
    total = 0.0
    alignment: list[dict] = []
    for step, _score in schema.entries:
        if step.embedding is None:
            raise DataError(f"schema step {step.step_id!r} has no embedding")
        best = None
        best_clip = None
        for clip in video.clips:
            value = _f(clip.embedding, step.embedding, normalize)
            if best is None or value > best:
                best = value
                best_clip = clip.clip_id
        total += best
        alignment.append({"step": step.text, "clip_id": best_clip, "f": best})
    return total / len(schema.entries), alignment


def m_step(schema: Schema, video: VideoRecord, normalize: bool = True) -> float:
    """Step aggregation: mean over steps of the best clip similarity."""
    return m_step_with_alignment(schema, video, normalize)[0]


def m_agg(
    query_embedding: np.ndarray,
    schema: Schema,
    video: VideoRecord,
    lambda_: float,
    normalize: bool = True,
) -> float:
    """Blend of global matching and step aggregation."""
    if not 0 <= lambda_ <= 1:
        raise DataError(f"lambda must be in [0, 1], got {lambda_}")
    return (1.0 - lambda_) * m_task(query_embedding, video, normalize) + lambda_ * m_step(
        schema, video, normalize
    )


def m_unseen(
    query_embedding: np.ndarray,
    sources: Sequence[tuple[float, Schema]],
    video: VideoRecord,
    lambda_: float,
    normalize: bool = True,
    normalize_g: bool = False,
) -> float:
    """Multi-source score for a task without its own schema.

    ``sources`` holds (task similarity, edited schema) pairs; the step term
    is their similarity-weighted sum divided by the source count (or by the
    similarity total under ``normalize_g``).  With no sources the score
    degrades to global matching.
    """
    if not 0 <= lambda_ <= 1:
        raise DataError(f"lambda must be in [0, 1], got {lambda_}")
    task_term = m_task(query_embedding, video, normalize)
    if not sources:
        logger.warning(
            "video %s scored without any edit sources; falling back to global matching",
            video.video_id,
        )
        return task_term
    contribution = 0.0
    weight_total = 0.0
    for weight, schema in sources:
        contribution += weight * m_step(schema, video, normalize)
        weight_total += weight
    denominator = weight_total if normalize_g else float(len(sources))
    if denominator == 0.0:
        raise DataError("source similarity weights sum to zero; cannot normalize")
    return (1.0 - lambda_) * task_term + (lambda_ / denominator) * contribution


def prepare_edit_sources(
    query: TaskRecord,
    library: SchemaLibrary,
    provider: ScorerProvider,
    params: RetrievalParams,
    registry: TaskRegistry | None = None,
    images: TaskImageRegistry | None = None,
    edit_params: EditParams | None = None,
) -> list[tuple[float, Schema, str]]:
    """Pick the top-R most similar schema-bearing tasks and edit each of
    their schemas toward the query.  Sources whose edit deletes every step
    are dropped (shrinking R) rather than aborting the query."""
    source_tasks = _source_tasks(library, registry)
    ranked = top_r_sources(query, source_tasks, params.r, provider, images)
    prepared: list[tuple[float, Schema, str]] = []
    for task, score in ranked:
        try:
            edited, _trace = edit_schema(
                library.schemas[task.task_id],
                task,
                query,
                params=edit_params,
                provider=provider,
            )
        except DataError as exc:
            if "empty edited schema" not in str(exc):
                raise
            logger.warning(
                "dropping edit source %s for query %s: %s",
                task.task_id,
                query.task_id,
                exc,
            )
            continue
        prepared.append((score.g, edited, task.task_id))
    return prepared


def _source_tasks(library: SchemaLibrary, registry: TaskRegistry | None) -> list[TaskRecord]:
    tasks = []
    for task_id in sorted(library.schemas):
        if registry is not None and task_id in registry:
            tasks.append(registry[task_id])
        else:
            tasks.append(TaskRecord(task_id=task_id, name=library.task_name(task_id)))
    return tasks


def rank_pool(
    query: TaskRecord,
    pool: VideoCorpus,
    mode: str,
    params: RetrievalParams | None = None,
    provider: ScorerProvider | None = None,
    library: SchemaLibrary | None = None,
    registry: TaskRegistry | None = None,
    images: TaskImageRegistry | None = None,
    edit_params: EditParams | None = None,
    workers: int = 1,
) -> RankedList:
    """Score every video in the pool for the query under one mode and sort
    descending, ties broken by video_id."""
    if mode not in MODES:
        raise DataError(f"unknown retrieval mode {mode!r}")
    if len(pool) == 0:
        raise DataError("cannot rank an empty pool")
    if provider is None:
        raise DataError("rank_pool requires a provider")
    params = params or RetrievalParams()
    query_embedding = provider.embed_text([query.name], space="joint")[0]

    schema: Schema | None = None
    sources: list[tuple[float, Schema, str]] = []
    if mode == "step_agg":
        if library is None or query.task_id not in library.schemas:
            raise DataError(
                f"step aggregation needs an induced schema for task {query.task_id!r}"
            )
        schema = library.schemas[query.task_id]
    elif mode == "ier":
        if library is None:
            raise DataError("ier mode needs a schema library")
        sources = prepare_edit_sources(
            query, library, provider, params,
            registry=registry, images=images, edit_params=edit_params,
        )
        if not sources:
            logger.warning(
                "query %s has no usable edit sources; ranking by global matching",
                query.task_id,
            )

    def score_video(video: VideoRecord) -> tuple[str, float, dict, list[dict] | None]:
        if mode == "global":
            task_term = m_task(query_embedding, video, params.normalize)
            return video.video_id, task_term, {"m_task": task_term}, None
        if mode == "step_agg":
            task_term = m_task(query_embedding, video, params.normalize)
            step_term, alignment = m_step_with_alignment(schema, video, params.normalize)
            score = (1.0 - params.lambda_) * task_term + params.lambda_ * step_term
            components = {"m_task": task_term, "m_step": {query.task_id: step_term}}
            return video.video_id, score, components, alignment
        task_term = m_task(query_embedding, video, params.normalize)
        if not sources:
            return video.video_id, task_term, {"m_task": task_term, "m_step": {}}, None
        contribution = 0.0
        weight_total = 0.0
        step_terms: dict[str, float] = {}
        alignment = None
        for weight, edited, source_id in sources:
            step_term, source_alignment = m_step_with_alignment(
                edited, video, params.normalize
            )
            if alignment is None:
                alignment = source_alignment
            step_terms[source_id] = step_term
            contribution += weight * step_term
            weight_total += weight
        denominator = weight_total if params.normalize_g else float(len(sources))
        if denominator == 0.0:
            raise DataError("source similarity weights sum to zero; cannot normalize")
        score = (1.0 - params.lambda_) * task_term + (params.lambda_ / denominator) * contribution
        return video.video_id, score, {"m_task": task_term, "m_step": step_terms}, alignment

    videos = list(pool)
    if workers <= 1:
        scored = [score_video(v) for v in videos]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            scored = list(executor.map(score_video, videos))

    scored.sort(key=lambda row: (-row[1], row[0]))
    entries = tuple((video_id, score) for video_id, score, _, _ in scored)
    component_scores = {video_id: comps for video_id, _, comps, _ in scored}
    alignments = {
        video_id: alignment
        for video_id, _, _, alignment in scored[: params.explain_top_k]
        if alignment is not None
    }
    return RankedList(
        query_task_id=query.task_id,
        mode=mode,
        entries=entries,
        component_scores=component_scores,
        alignments=alignments,
    )
