"""Clip-list reduction: k-means over clip features with silhouette model selection.

A raw video arrives as a long, redundant clip list.  This module clusters the
clip features for each k in a small range, keeps the k with the best
silhouette, and emits the real clip nearest each centroid.  Videos with
human-annotated segments, or fewer clips than the minimum k, pass through
untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import VideoCorpus, VideoRecord
from .errors import DataError
from .scoring import fnv1a64

logger = logging.getLogger(__name__)

KMEANS_MAX_ITER = 100
DEFAULT_K_MIN = 5
DEFAULT_K_MAX = 10


@dataclass(frozen=True)
class SegmentationResult:
    """Outcome of model selection for one video.

    ``chosen_k`` is in [5, 10] except for pass-through videos, where it
    equals the clip count.  ``kept_clip_ids`` are original clips ordered by
    start time.
    """

    chosen_k: int
    kept_clip_ids: tuple[str, ...]
    silhouette: float

    def __post_init__(self) -> None:
        if len(self.kept_clip_ids) != self.chosen_k:
            raise DataError(
                f"segmentation kept {len(self.kept_clip_ids)} clips but chose k={self.chosen_k}"
            )
        if len(set(self.kept_clip_ids)) != len(self.kept_clip_ids):
            raise DataError("segmentation kept duplicate clips")

    def to_json_dict(self) -> dict:
        return {
            "chosen_k": self.chosen_k,
            "kept_clip_ids": list(self.kept_clip_ids),
            "silhouette": self.silhouette,
        }


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diffs = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ikd,ikd->ik", diffs, diffs)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    while len(chosen) < k:
        d2 = _squared_distances(points, points[chosen]).min(axis=1)
        total = float(d2.sum())
        if total == 0.0:
            # all remaining mass sits on already-chosen points; take the
            # lowest unchosen index for determinism
            remaining = [i for i in range(n) if i not in set(chosen)]
            chosen.append(remaining[0])
            continue
        chosen.append(int(rng.choice(n, p=d2 / total)))
    return points[chosen].astype(np.float64).copy()


def kmeans(points: np.ndarray, k: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means++ plus Lloyd iterations (capped at 100).

    Returns (assignments, centroids).  Every cluster is non-empty on return:
    a cluster that empties is reseeded to the farthest point whose own
    cluster can spare it, so reseeding never empties another cluster.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DataError("kmeans expects a 2-D point array")
    n = points.shape[0]
    if k < 1:
        raise DataError(f"kmeans needs k >= 1, got {k}")
    if k > n:
        raise DataError(f"kmeans needs at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        d2 = _squared_distances(points, centroids)
        new_assignments = d2.argmin(axis=1)
        while True:
            counts = np.bincount(new_assignments, minlength=k)
            empties = np.flatnonzero(counts == 0)
            if empties.size == 0:
                break
            # while any cluster is empty some other holds >= 2 points, so a
            # movable donor always exists
            own_d2 = d2[np.arange(n), new_assignments]
            own_d2 = np.where(counts[new_assignments] > 1, own_d2, -np.inf)
            farthest = int(own_d2.argmax())
            cluster = int(empties[0])
            centroids[cluster] = points[farthest]
            new_assignments[farthest] = cluster
            d2 = _squared_distances(points, centroids)
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for cluster in range(k):
            centroids[cluster] = points[assignments == cluster].mean(axis=0)
    return assignments, centroids


def kmeans_objective(points: np.ndarray, assignments: np.ndarray, centroids: np.ndarray) -> float:
    """Sum of squared point-to-assigned-centroid distances."""
    points = np.asarray(points, dtype=np.float64)
    diffs = points - centroids[assignments]
    return float(np.einsum("id,id->", diffs, diffs))


def silhouette(points: np.ndarray, assignments: np.ndarray) -> float:
    """Mean silhouette over points; singleton clusters contribute 0, as does
    the 0/0 case of coincident points."""
    points = np.asarray(points, dtype=np.float64)
    assignments = np.asarray(assignments)
    labels = np.unique(assignments)
    if labels.size < 2:
        raise DataError("silhouette needs at least 2 clusters")
    n = points.shape[0]
    diffs = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.einsum("ijd,ijd->ij", diffs, diffs))
    scores = np.zeros(n, dtype=np.float64)
    for i in range(n):
        own = assignments == assignments[i]
        own_size = int(own.sum())
        if own_size == 1:
            continue
        a = float(dist[i, own].sum()) / (own_size - 1)
        b = min(
            float(dist[i, assignments == label].mean())
            for label in labels
            if label != assignments[i]
        )
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def select_segments(
    video: VideoRecord,
    seed: int,
    k_min: int = DEFAULT_K_MIN,
    k_max: int = DEFAULT_K_MAX,
    metric: str = "euclidean",
) -> SegmentationResult:
    """Pick the best k in [k_min, min(k_max, clip count)] by silhouette
    (ties favor smaller k) and keep the clip nearest each centroid."""
    if metric not in ("euclidean", "cosine"):
        raise DataError(f"unknown segmentation metric {metric!r}")
    clips = sorted(video.clips, key=lambda c: c.clip_id)
    n = len(clips)
    if n < k_min:
        kept = tuple(c.clip_id for c in _by_start(video.clips))
        return SegmentationResult(chosen_k=n, kept_clip_ids=kept, silhouette=0.0)
    points = np.stack([c.seg_features for c in clips]).astype(np.float64)
    if metric == "cosine":
        norms = np.linalg.norm(points, axis=1, keepdims=True)
        points = points / norms
    best: tuple[float, int, np.ndarray, np.ndarray] | None = None
    for k in range(k_min, min(k_max, n) + 1):
        assignments, centroids = kmeans(points, k, seed)
        score = silhouette(points, assignments) if k >= 2 else 0.0
        if best is None or score > best[0]:
            best = (score, k, assignments, centroids)
    assert best is not None
    score, k, assignments, centroids = best
    kept_ids = []
    for cluster in range(k):
        member_idx = np.flatnonzero(assignments == cluster)
        d = np.linalg.norm(points[member_idx] - centroids[cluster], axis=1)
        # argmin ties resolve to the first member, which is the
        # lexicographically smallest clip_id because clips were id-sorted
        kept_ids.append(clips[int(member_idx[int(d.argmin())])].clip_id)
    by_start = {c.clip_id: (c.start_s, c.clip_id) for c in video.clips}
    kept_ids.sort(key=lambda cid: by_start[cid])
    return SegmentationResult(chosen_k=k, kept_clip_ids=tuple(kept_ids), silhouette=score)


def _by_start(clips) -> list:
    return sorted(clips, key=lambda c: (c.start_s, c.clip_id))


def apply_segmentation(
    video: VideoRecord, result: SegmentationResult, seed: int, metric: str
) -> VideoRecord:
    """A copy of ``video`` reduced to the kept clips, with segmentation
    metadata recorded."""
    keep = set(result.kept_clip_ids)
    missing = keep - {c.clip_id for c in video.clips}
    if missing:
        raise DataError(f"segmentation kept unknown clips {sorted(missing)}")
    clips = tuple(c for c in _by_start(video.clips) if c.clip_id in keep)
    meta = dict(result.to_json_dict())
    meta.update(seed=seed, metric=metric, original_clip_count=len(video.clips))
    return VideoRecord(
        video_id=video.video_id,
        clips=clips,
        task_id=video.task_id,
        source_rank=video.source_rank,
        annotated_segments=video.annotated_segments,
        segmentation=meta,
    )


def segment_video(
    video: VideoRecord,
    seed: int,
    k_min: int = DEFAULT_K_MIN,
    k_max: int = DEFAULT_K_MAX,
    metric: str = "euclidean",
    skip_annotated: bool = True,
) -> VideoRecord:
    """Segment one video; human-annotated videos pass through untouched."""
    if skip_annotated and video.annotated_segments:
        return video
    video_seed = _video_seed(seed, video.video_id)
    result = select_segments(video, video_seed, k_min=k_min, k_max=k_max, metric=metric)
    return apply_segmentation(video, result, seed=seed, metric=metric)


def segment_corpus(
    corpus: VideoCorpus,
    seed: int,
    k_min: int = DEFAULT_K_MIN,
    k_max: int = DEFAULT_K_MAX,
    metric: str = "euclidean",
    skip_annotated: bool = True,
) -> VideoCorpus:
    """Segment every video in the corpus.

    Each video draws an independent seed from (seed, video_id), so results
    do not depend on processing order and per-video work may run in parallel.
    """
    videos = [
        segment_video(
            v, seed, k_min=k_min, k_max=k_max, metric=metric, skip_annotated=skip_annotated
        )
        for v in corpus
    ]
    return VideoCorpus(videos)


def _video_seed(seed: int, video_id: str) -> int:
    return int(
        np.random.SeedSequence((seed, fnv1a64(video_id))).generate_state(1)[0]
    )
