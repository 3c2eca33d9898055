"""Schema induction: build a step schema for each task that has videos.

Pipeline per task: collect each clip's top-scoring step sentences, score that
candidate pool against all of the task's videos (per-video inner average,
then mean over videos), keep the best hundred, merge near-duplicate sentences
by agglomerative clustering on their embeddings, and emit the best-scored
member of each cluster.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import pdist

from .corpus import (
    ClipRecord,
    Provenance,
    Schema,
    SchemaLibrary,
    StepCorpus,
    StepSentence,
    TaskRecord,
    TaskRegistry,
    VideoCorpus,
    filter_known_tasks,
)
from .errors import DataError
from .scoring import match_score

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InductionParams:
    """Knobs for schema induction; defaults match the reference setting."""

    per_clip_top_n: int = 30
    per_task_top_m: int = 100
    cluster_distance_threshold: float = 0.10
    min_videos: int = 20
    pooled_clips: bool = False  # alternative reading: average over pooled clips
    normalize: bool = True

    def __post_init__(self) -> None:
        if self.per_clip_top_n <= 0 or self.per_task_top_m <= 0:
            raise DataError("induction top-n and top-m must be positive")
        if self.cluster_distance_threshold < 0:
            raise DataError("cluster distance threshold must be >= 0")
        if self.min_videos <= 0:
            raise DataError("min_videos must be positive")

    def as_dict(self) -> dict:
        return {
            "per_clip_top_n": self.per_clip_top_n,
            "per_task_top_m": self.per_task_top_m,
            "cluster_distance_threshold": self.cluster_distance_threshold,
            "min_videos": self.min_videos,
            "pooled_clips": self.pooled_clips,
            "normalize": self.normalize,
        }


def top_steps_for_clip(
    clip: ClipRecord, step_corpus: StepCorpus, n: int, normalize: bool = True
) -> list[tuple[str, float]]:
    """The n highest-scoring steps for one clip, descending, ties by step_id."""
    scored = [
        (step.step_id, match_score(clip, step, normalize=normalize))
        for step in step_corpus
    ]
    scored.sort(key=lambda e: (-e[1], e[0]))
    return scored[:n]


def task_step_score(
    step: StepSentence,
    task_id: str,
    video_corpus: VideoCorpus,
    normalize: bool = True,
    pooled_clips: bool = False,
) -> float:
    """Mean over the task's videos of the mean clip score within each video.

    ``pooled_clips=True`` switches to a flat average over every clip of every
    video, the alternative reading of the same formula.
    """
    videos = video_corpus.videos_for_task(task_id)
    if not videos:
        raise DataError(f"task {task_id!r} has no videos")
    if pooled_clips:
        scores = [
            match_score(clip, step, normalize=normalize)
            for video in videos
            for clip in video.clips
        ]
        return sum(scores) / len(scores)
    total = 0.0
    for video in videos:
        inner = 0.0
        for clip in video.clips:
            inner += match_score(clip, step, normalize=normalize)
        total += inner / len(video.clips)
    return total / len(videos)


def cluster_steps(embeddings: np.ndarray, threshold: float) -> list[list[int]]:
    """Group step embeddings by average-linkage agglomerative clustering on
    cosine distance, merging only while linkage distance is strictly below
    ``threshold``.  Returns index groups; threshold 0 leaves singletons."""
    n = embeddings.shape[0]
    if n == 1:
        return [[0]]
    distances = pdist(np.asarray(embeddings, dtype=np.float64), metric="cosine")
    # identical vectors can round to a tiny negative distance; clamp so a
    # zero threshold really merges nothing
    distances = np.maximum(distances, 0.0)
    merges = linkage(distances, method="average")
    # replay the merge tree: scipy numbers new clusters n, n+1, ... in merge
    # order; stop merging at the first linkage height >= threshold
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    for row_index, (left, right, height, _) in enumerate(merges):
        if height >= threshold:
            break
        merged = members.pop(int(left)) + members.pop(int(right))
        members[n + row_index] = merged
    return sorted(members.values(), key=lambda group: min(group))


def induce_schema(
    task: TaskRecord,
    video_corpus: VideoCorpus,
    step_corpus: StepCorpus,
    params: InductionParams | None = None,
) -> Schema:
    """Induce the schema for one task with videos."""
    params = params or InductionParams()
    videos = video_corpus.videos_for_task(task.task_id)
    if not videos:
        raise DataError(f"task {task.task_id!r} has no videos")
    for step in step_corpus:
        if step.embedding is None:
            raise DataError(f"step {step.step_id!r} has no embedding")

    candidate_ids: set[str] = set()
    for video in videos:
        for clip in video.clips:
            candidate_ids.update(
                step_id
                for step_id, _ in top_steps_for_clip(
                    clip, step_corpus, params.per_clip_top_n, normalize=params.normalize
                )
            )
    if not candidate_ids:
        raise DataError(
            f"task {task.task_id!r}: empty candidate set; step and clip "
            "embeddings appear to live in different spaces"
        )

    scored = [
        (
            step_corpus[step_id],
            task_step_score(
                step_corpus[step_id],
                task.task_id,
                video_corpus,
                normalize=params.normalize,
                pooled_clips=params.pooled_clips,
            ),
        )
        for step_id in sorted(candidate_ids)
    ]
    scored.sort(key=lambda e: (-e[1], e[0].step_id))
    shortlist = scored[: params.per_task_top_m]

    embeddings = np.stack([step.embedding for step, _ in shortlist])
    groups = cluster_steps(embeddings, params.cluster_distance_threshold)
    representatives = []
    for group in groups:
        best = min(group, key=lambda i: (-shortlist[i][1], shortlist[i][0].step_id))
        representatives.append(shortlist[best])
    return Schema.build(
        task_id=task.task_id,
        scored_steps=representatives,
        provenance=Provenance.induced(params.as_dict()),
    )


def induce_library(
    registry: TaskRegistry,
    video_corpus: VideoCorpus,
    step_corpus: StepCorpus,
    params: InductionParams | None = None,
    extra_meta: dict | None = None,
) -> SchemaLibrary:
    """Induce schemas for every task that clears the min-videos filter."""
    params = params or InductionParams()
    filtered = filter_known_tasks(registry, video_corpus, min_videos=params.min_videos)
    schemas = {}
    for task in filtered.known():
        schemas[task.task_id] = induce_schema(task, video_corpus, step_corpus, params)
        logger.info(
            "induced schema for %s: %d steps", task.task_id, len(schemas[task.task_id])
        )
    if not schemas:
        raise DataError(
            f"no task has >= {params.min_videos} videos; nothing to induce"
        )
    meta = {
        "tasks": {t.task_id: t.name for t in filtered},
        "partitions": {t.task_id: t.partition for t in filtered},
        "induction_params": params.as_dict(),
    }
    meta.update(extra_meta or {})
    return SchemaLibrary(schemas=schemas, meta=meta)
