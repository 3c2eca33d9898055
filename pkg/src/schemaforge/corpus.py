"""Data model, ingestion, validation, and persistence for tasks, videos, clips,
step corpora, and schema libraries.

File formats
------------
- ``steps.jsonl``: ``{"id": str, "text": str, "embedding": [f32...]?, "embedding_ref": int?}``
- ``videos.jsonl``: ``{"video_id": str, "task_id": str?, "source_rank": int?,
  "clips": [{"clip_id": str, "start_s": f32, "end_s": f32,
  "embedding": [f32...]?, "embedding_ref": int?}]}``
- ``embeddings.bin``: magic ``IERE`` | format_version u16 LE | dim u32 LE |
  count u64 LE | count x dim f32 LE rows. ``embedding_ref`` indexes rows.
- ``schema_library.json``: ``{"format_version": 1, "meta": {...}, "schemas": [...]}``

Embeddings may be inline JSON arrays or rows of a companion binary file; both
paths produce bit-identical float32 vectors.  All corpus structures are
immutable after load and safe for concurrent reads.  Iteration order is
deterministic: tasks, videos, and steps are sorted by their (opaque, unique)
string ids; clips keep their in-file (temporal) order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

EMBED_DTYPE = np.float32
EMBED_MAGIC = b"IERE"
EMBED_FORMAT_VERSION = 1
LIBRARY_FORMAT_VERSION = 1

KNOWN = "known"
UNKNOWN = "unknown"

MAX_SCHEMA_ENTRIES = 100


# ---------------------------------------------------------------------------
# binary embedding file


def write_embedding_file(path: str | Path, matrix: np.ndarray) -> None:
    """Write a (count, dim) matrix as float32 rows behind the IERE header."""
    matrix = np.ascontiguousarray(matrix, dtype=EMBED_DTYPE)
    if matrix.ndim != 2:
        raise DataError(f"embedding matrix must be 2-D, got shape {matrix.shape}")
    count, dim = matrix.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHIQ", EMBED_MAGIC, EMBED_FORMAT_VERSION, dim, count))
        fh.write(matrix.tobytes(order="C"))


def read_embedding_file(path: str | Path) -> np.ndarray:
    """Read an IERE embedding file into a (count, dim) float32 matrix."""
    header_size = struct.calcsize("<4sHIQ")
    with open(path, "rb") as fh:
        header = fh.read(header_size)
        if len(header) < header_size:
            raise DataError(f"{path}: truncated embedding file header")
        magic, version, dim, count = struct.unpack("<4sHIQ", header)
        if magic != EMBED_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {EMBED_MAGIC!r}")
        if version != EMBED_FORMAT_VERSION:
            raise DataError(
                f"{path}: unsupported embedding format_version {version}, "
                f"expected {EMBED_FORMAT_VERSION}"
            )
        payload = fh.read()
    expected = count * dim * np.dtype(EMBED_DTYPE).itemsize
    if len(payload) != expected:
        raise DataError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=EMBED_DTYPE).reshape(count, dim).copy()


def default_embeddings_path(path: str | Path) -> Path:
    """Companion binary path for a JSONL manifest: ``steps.jsonl`` -> ``steps.embeddings.bin``."""
    path = Path(path)
    return path.with_name(path.stem + ".embeddings.bin")


def _as_embedding(values: Sequence[float]) -> np.ndarray:
    vec = np.asarray(values, dtype=EMBED_DTYPE)
    if vec.ndim != 1:
        raise DataError(f"embedding must be a flat vector, got shape {vec.shape}")
    return vec


def _resolve_embedding(
    obj: Mapping,
    rows: np.ndarray | None,
    *,
    owner: str,
    where: str,
) -> np.ndarray | None:
    """Resolve an inline ``embedding`` or a row-indexed ``embedding_ref``."""
    inline = obj.get("embedding")
    ref = obj.get("embedding_ref")
    if inline is not None and ref is not None:
        raise DataError(f"{where}: {owner} has both embedding and embedding_ref")
    if inline is not None:
        return _as_embedding(inline)
    if ref is None:
        return None
    if rows is None:
        raise DataError(
            f"{where}: {owner} uses embedding_ref {ref} but no embedding file was found"
        )
    if not isinstance(ref, int) or ref < 0 or ref >= rows.shape[0]:
        raise DataError(
            f"{where}: {owner} embedding_ref {ref} out of range (file has {rows.shape[0]} rows)"
        )
    return rows[ref].copy()


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (1-based line number, parsed object) for every non-blank line."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: malformed JSON on line {lineno}: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}: line {lineno} is not a JSON object")
            yield lineno, obj


def _format_float(x: float) -> float:
    # float32 -> builtin float is exact; json round-trips it bit-identically
    return float(x)


# ---------------------------------------------------------------------------
# domain types


@dataclass(eq=False)
class TaskRecord:
    """A task: the retrieval query unit.

    ``partition`` is "known" (has induction videos) or "unknown".
    ``main_object`` is filled by the editing module when first extracted.
    ``image_embedding`` is an optional visual representation of the task.
    """

    task_id: str
    name: str
    partition: str = UNKNOWN
    main_object: str | None = None
    image_embedding: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.task_id:
            raise DataError("task_id must be non-empty")
        if not self.name:
            raise DataError(f"task {self.task_id!r}: name must be non-empty")
        if self.partition not in (KNOWN, UNKNOWN):
            raise DataError(
                f"task {self.task_id!r}: partition must be 'known' or 'unknown', "
                f"got {self.partition!r}"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TaskRecord):
            return NotImplemented
        return (
            self.task_id == other.task_id
            and self.name == other.name
            and self.partition == other.partition
            and self.main_object == other.main_object
            and _opt_array_equal(self.image_embedding, other.image_embedding)
        )


@dataclass(eq=False)
class ClipRecord:
    """A video segment with its joint-space embedding and time span.

    ``seg_embedding`` optionally carries a separate feature for segmentation
    clustering; when absent the joint embedding is reused.
    """

    clip_id: str
    video_id: str
    start_s: float
    end_s: float
    embedding: np.ndarray
    seg_embedding: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not (self.start_s < self.end_s):
            raise DataError(
                f"clip {self.clip_id!r}: start_s ({self.start_s}) must be < end_s ({self.end_s})"
            )
        norm = float(np.linalg.norm(np.asarray(self.embedding, dtype=np.float64)))
        if not np.isfinite(norm) or norm <= 0.0:
            raise DataError(f"clip {self.clip_id!r}: embedding norm must be finite and > 0")

    @property
    def seg_features(self) -> np.ndarray:
        return self.embedding if self.seg_embedding is None else self.seg_embedding

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClipRecord):
            return NotImplemented
        return (
            self.clip_id == other.clip_id
            and self.video_id == other.video_id
            and self.start_s == other.start_s
            and self.end_s == other.end_s
            and np.array_equal(self.embedding, other.embedding)
            and _opt_array_equal(self.seg_embedding, other.seg_embedding)
        )


@dataclass(eq=False)
class VideoRecord:
    """A video: an ordered list of clips plus optional ground-truth label."""

    video_id: str
    clips: tuple[ClipRecord, ...]
    task_id: str | None = None
    source_rank: int | None = None
    annotated_segments: bool = False
    segmentation: dict | None = None

    def __post_init__(self) -> None:
        self.clips = tuple(self.clips)
        if not self.clips:
            raise DataError(f"video {self.video_id!r}: must have at least one clip")
        for clip in self.clips:
            if clip.video_id != self.video_id:
                raise DataError(
                    f"video {self.video_id!r}: clip {clip.clip_id!r} carries "
                    f"video_id {clip.video_id!r}"
                )

    def clips_by_id(self) -> list[ClipRecord]:
        """Clips in canonical (lexicographic clip_id) order, for reductions."""
        return sorted(self.clips, key=lambda c: c.clip_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VideoRecord):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.task_id == other.task_id
            and self.source_rank == other.source_rank
            and self.annotated_segments == other.annotated_segments
            and self.segmentation == other.segmentation
            and self.clips == other.clips
        )


@dataclass(eq=False)
class StepSentence:
    """A candidate step from the background corpus: text, optional tags, embedding."""

    step_id: str
    text: str
    tokens: tuple[tuple[str, str], ...] | None = None
    embedding: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise DataError(f"step {self.step_id!r}: text must be non-empty")
        if self.tokens is not None:
            self.tokens = tuple((s, t) for s, t in self.tokens)
            joined = " ".join(surface for surface, _ in self.tokens)
            if joined != self.text:
                raise DataError(
                    f"step {self.step_id!r}: tokens do not round-trip to text "
                    f"({joined!r} != {self.text!r})"
                )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StepSentence):
            return NotImplemented
        return (
            self.step_id == other.step_id
            and self.text == other.text
            and self.tokens == other.tokens
            and _opt_array_equal(self.embedding, other.embedding)
        )


def _opt_array_equal(a: np.ndarray | None, b: np.ndarray | None) -> bool:
    if a is None or b is None:
        return (a is None) == (b is None)
    return np.array_equal(a, b)


@dataclass(frozen=True)
class Provenance:
    """How a schema came to be: induced from videos, or edited from a source
    task.  ``params`` records the knob settings in force, as sorted pairs."""

    kind: str  # "induced" | "edited"
    source_task_id: str | None = None
    params: tuple[tuple[str, object], ...] = ()

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.source_task_id is not None:
            out["source_task_id"] = self.source_task_id
        if self.params:
            out["params"] = dict(self.params)
        return out

    @classmethod
    def induced(cls, params: Mapping | None = None) -> "Provenance":
        return cls(kind="induced", params=_freeze_params(params))

    @classmethod
    def edited(cls, source_task_id: str, params: Mapping | None = None) -> "Provenance":
        return cls(
            kind="edited", source_task_id=source_task_id, params=_freeze_params(params)
        )

    @classmethod
    def from_json(cls, obj: Mapping) -> "Provenance":
        kind = obj.get("kind")
        if kind not in ("induced", "edited"):
            raise DataError(f"unknown schema provenance kind {kind!r}")
        return cls(
            kind=kind,
            source_task_id=obj.get("source_task_id"),
            params=_freeze_params(obj.get("params")),
        )


def _freeze_params(params: Mapping | None) -> tuple[tuple[str, object], ...]:
    return tuple(sorted((params or {}).items()))


@dataclass(eq=False)
class Schema:
    """An unordered set of scored step sentences attached to a task.

    Entries are stored sorted by score descending (ties by step_id), texts are
    unique, and 1 <= len(entries) <= 100.  Equality compares the persisted
    fields only (task_id, provenance, entry texts and scores); step ids and
    embeddings are derived, transient state and the library file format does
    not carry them.
    """

    task_id: str
    entries: tuple[tuple[StepSentence, float], ...]
    provenance: Provenance = field(default_factory=Provenance.induced)

    def __post_init__(self) -> None:
        self.entries = tuple((step, float(score)) for step, score in self.entries)
        if not self.entries:
            raise DataError(f"schema for task {self.task_id!r}: must have >= 1 entry")
        if len(self.entries) > MAX_SCHEMA_ENTRIES:
            raise DataError(
                f"schema for task {self.task_id!r}: {len(self.entries)} entries exceeds "
                f"the {MAX_SCHEMA_ENTRIES}-entry cap"
            )
        scores = [score for _, score in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise DataError(f"schema for task {self.task_id!r}: entries not sorted by score")
        texts = [step.text for step, _ in self.entries]
        if len(set(texts)) != len(texts):
            raise DataError(f"schema for task {self.task_id!r}: duplicate entry text")

    @classmethod
    def build(
        cls,
        task_id: str,
        scored_steps: Iterable[tuple[StepSentence, float]],
        provenance: Provenance | None = None,
        max_entries: int = MAX_SCHEMA_ENTRIES,
    ) -> "Schema":
        """Sort by score descending (ties by step_id), drop duplicate texts
        keeping the best-scored occurrence, and cap the entry count."""
        ranked = sorted(scored_steps, key=lambda e: (-e[1], e[0].step_id))
        seen: set[str] = set()
        kept: list[tuple[StepSentence, float]] = []
        for step, score in ranked:
            if step.text in seen:
                continue
            seen.add(step.text)
            kept.append((step, score))
            if len(kept) >= max_entries:
                break
        return cls(
            task_id=task_id,
            entries=tuple(kept),
            provenance=provenance or Provenance.induced(),
        )

    def texts(self) -> list[str]:
        return [step.text for step, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Schema):
            return NotImplemented
        return (
            self.task_id == other.task_id
            and self.provenance == other.provenance
            and [(s.text, sc) for s, sc in self.entries]
            == [(s.text, sc) for s, sc in other.entries]
        )


# ---------------------------------------------------------------------------
# containers


class StepCorpus:
    """Immutable step-sentence corpus, iterated in step_id order."""

    def __init__(self, steps: Iterable[StepSentence]):
        ordered = sorted(steps, key=lambda s: s.step_id)
        if not ordered:
            raise DataError("empty corpus")
        by_id: dict[str, StepSentence] = {}
        for step in ordered:
            if step.step_id in by_id:
                raise DataError(f"duplicate step_id {step.step_id!r}")
            by_id[step.step_id] = step
        dims = {step.embedding.shape[0] for step in ordered if step.embedding is not None}
        if len(dims) > 1:
            raise DataError(f"step corpus mixes embedding dimensions {sorted(dims)}")
        self._steps = tuple(ordered)
        self._by_id = by_id
        self.dim: int | None = dims.pop() if dims else None

    def __len__(self) -> int:
        return len(self._steps)

    def __iter__(self) -> Iterator[StepSentence]:
        return iter(self._steps)

    def __getitem__(self, step_id: str) -> StepSentence:
        try:
            return self._by_id[step_id]
        except KeyError:
            raise DataError(f"unknown step_id {step_id!r}") from None

    def __contains__(self, step_id: str) -> bool:
        return step_id in self._by_id

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StepCorpus):
            return NotImplemented
        return self._steps == other._steps


class VideoCorpus:
    """Immutable video corpus, iterated in video_id order."""

    def __init__(self, videos: Iterable[VideoRecord]):
        ordered = sorted(videos, key=lambda v: v.video_id)
        by_id: dict[str, VideoRecord] = {}
        for video in ordered:
            if video.video_id in by_id:
                raise DataError(f"overlapping-ID videos: duplicate video_id {video.video_id!r}")
            by_id[video.video_id] = video
        dims = {
            clip.embedding.shape[0] for video in ordered for clip in video.clips
        }
        if len(dims) > 1:
            raise DataError(f"video corpus mixes clip embedding dimensions {sorted(dims)}")
        self._videos = tuple(ordered)
        self._by_id = by_id
        self.dim: int | None = dims.pop() if dims else None

    def __len__(self) -> int:
        return len(self._videos)

    def __iter__(self) -> Iterator[VideoRecord]:
        return iter(self._videos)

    def __getitem__(self, video_id: str) -> VideoRecord:
        try:
            return self._by_id[video_id]
        except KeyError:
            raise DataError(f"unknown video_id {video_id!r}") from None

    def __contains__(self, video_id: str) -> bool:
        return video_id in self._by_id

    def videos_for_task(self, task_id: str) -> list[VideoRecord]:
        return [v for v in self._videos if v.task_id == task_id]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VideoCorpus):
            return NotImplemented
        return self._videos == other._videos


class TaskRegistry:
    """Immutable task registry, iterated in task_id order."""

    def __init__(self, tasks: Iterable[TaskRecord]):
        ordered = sorted(tasks, key=lambda t: t.task_id)
        by_id: dict[str, TaskRecord] = {}
        by_name: dict[str, TaskRecord] = {}
        for task in ordered:
            if task.task_id in by_id:
                raise DataError(f"duplicate task_id {task.task_id!r}")
            by_id[task.task_id] = task
            by_name.setdefault(task.name, task)
        self._tasks = tuple(ordered)
        self._by_id = by_id
        self._by_name = by_name

    def __len__(self) -> int:
        return len(self._tasks)

    def __iter__(self) -> Iterator[TaskRecord]:
        return iter(self._tasks)

    def __getitem__(self, task_id: str) -> TaskRecord:
        try:
            return self._by_id[task_id]
        except KeyError:
            raise DataError(f"unknown task_id {task_id!r}") from None

    def __contains__(self, task_id: str) -> bool:
        return task_id in self._by_id

    def by_name(self, name: str) -> TaskRecord | None:
        return self._by_name.get(name)

    def known(self) -> list[TaskRecord]:
        return [t for t in self._tasks if t.partition == KNOWN]

    def unknown(self) -> list[TaskRecord]:
        return [t for t in self._tasks if t.partition == UNKNOWN]

    def validate_against_videos(self, videos: VideoCorpus) -> None:
        """Known tasks must have at least one video; video labels must resolve."""
        counts = _video_counts(videos)
        for task in self.known():
            if counts.get(task.task_id, 0) < 1:
                raise DataError(f"known task {task.task_id!r} has no videos")
        for video in videos:
            if video.task_id is not None and video.task_id not in self._by_id:
                raise DataError(
                    f"video {video.video_id!r} labeled with unknown task {video.task_id!r}"
                )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TaskRegistry):
            return NotImplemented
        return self._tasks == other._tasks


def _video_counts(videos: VideoCorpus) -> dict[str, int]:
    counts: dict[str, int] = {}
    for video in videos:
        if video.task_id is not None:
            counts[video.task_id] = counts.get(video.task_id, 0) + 1
    return counts


def filter_known_tasks(
    registry: TaskRegistry, videos: VideoCorpus, min_videos: int = 20
) -> TaskRegistry:
    """Restrict the known partition to tasks with >= min_videos videos.

    Tasks falling below the threshold are demoted to the unknown partition.
    """
    counts = _video_counts(videos)
    updated = []
    n_known = 0
    for task in registry:
        partition = KNOWN if counts.get(task.task_id, 0) >= min_videos else UNKNOWN
        if task.partition == UNKNOWN:
            partition = UNKNOWN
        if partition == KNOWN:
            n_known += 1
        updated.append(
            TaskRecord(
                task_id=task.task_id,
                name=task.name,
                partition=partition,
                main_object=task.main_object,
                image_embedding=task.image_embedding,
            )
        )
    if n_known == 0:
        logger.warning("filter_known_tasks: no task has >= %d videos; known set is empty", min_videos)
    return TaskRegistry(updated)


# ---------------------------------------------------------------------------
# loaders / writers


def load_step_corpus(
    path: str | Path, embeddings_path: str | Path | None = None
) -> StepCorpus:
    """Load ``steps.jsonl``; embeddings resolve inline or via the companion file."""
    path = Path(path)
    rows = _maybe_read_rows(path, embeddings_path)
    steps: list[StepSentence] = []
    seen: set[str] = set()
    dim: int | None = None
    for lineno, obj in _iter_jsonl(path):
        step_id = obj.get("id")
        text = obj.get("text")
        if not isinstance(step_id, str) or not step_id:
            raise DataError(f"{path}: line {lineno}: missing or empty 'id'")
        if not isinstance(text, str) or not text:
            raise DataError(f"{path}: line {lineno}: missing or empty 'text'")
        if step_id in seen:
            raise DataError(f"{path}: line {lineno}: duplicate step_id {step_id!r}")
        seen.add(step_id)
        embedding = _resolve_embedding(obj, rows, owner=f"step {step_id!r}", where=str(path))
        if embedding is not None:
            if dim is None:
                dim = embedding.shape[0]
            elif embedding.shape[0] != dim:
                raise DataError(
                    f"{path}: step {step_id!r} has embedding dimension "
                    f"{embedding.shape[0]}, expected {dim}"
                )
        steps.append(StepSentence(step_id=step_id, text=text, embedding=embedding))
    if not steps:
        raise DataError(f"{path}: empty corpus")
    return StepCorpus(steps)


def load_video_corpus(
    path: str | Path,
    embeddings_path: str | Path | None = None,
    rank_cutoff: int | None = 150,
) -> VideoCorpus:
    """Load ``videos.jsonl``; videos ranked worse than ``rank_cutoff`` are dropped.

    Pass ``rank_cutoff=None`` to disable the filter.  Videos without a
    source_rank are always kept.
    """
    path = Path(path)
    rows = _maybe_read_rows(path, embeddings_path)
    videos: list[VideoRecord] = []
    for lineno, obj in _iter_jsonl(path):
        video_id = obj.get("video_id")
        if not isinstance(video_id, str) or not video_id:
            raise DataError(f"{path}: line {lineno}: missing or empty 'video_id'")
        source_rank = obj.get("source_rank")
        if rank_cutoff is not None and source_rank is not None and source_rank > rank_cutoff:
            continue
        clip_objs = obj.get("clips")
        if not isinstance(clip_objs, list) or not clip_objs:
            raise DataError(f"{path}: line {lineno}: video {video_id!r} has no clips")
        clips = []
        for clip_obj in clip_objs:
            clip_id = clip_obj.get("clip_id")
            if not isinstance(clip_id, str) or not clip_id:
                raise DataError(f"{path}: line {lineno}: clip in {video_id!r} missing clip_id")
            embedding = _resolve_embedding(
                clip_obj, rows, owner=f"clip {clip_id!r}", where=str(path)
            )
            if embedding is None:
                raise DataError(f"{path}: missing embedding row for clip {clip_id!r}")
            seg = clip_obj.get("seg_embedding")
            seg_ref = clip_obj.get("seg_embedding_ref")
            seg_embedding = None
            if seg is not None:
                seg_embedding = _as_embedding(seg)
            elif seg_ref is not None:
                seg_embedding = _resolve_embedding(
                    {"embedding_ref": seg_ref}, rows, owner=f"clip {clip_id!r} seg", where=str(path)
                )
            clips.append(
                ClipRecord(
                    clip_id=clip_id,
                    video_id=video_id,
                    start_s=float(clip_obj.get("start_s", 0.0)),
                    end_s=float(clip_obj.get("end_s", 0.0)),
                    embedding=embedding,
                    seg_embedding=seg_embedding,
                )
            )
        videos.append(
            VideoRecord(
                video_id=video_id,
                clips=tuple(clips),
                task_id=obj.get("task_id"),
                source_rank=source_rank,
                annotated_segments=bool(obj.get("annotated_segments", False)),
                segmentation=obj.get("segmentation"),
            )
        )
    return VideoCorpus(videos)


def load_task_registry(path: str | Path) -> TaskRegistry:
    """Load ``tasks.jsonl``: ``{"task_id": str, "name": str, "partition": str?}``."""
    path = Path(path)
    tasks = []
    for lineno, obj in _iter_jsonl(path):
        task_id = obj.get("task_id")
        name = obj.get("name")
        if not isinstance(task_id, str) or not task_id:
            raise DataError(f"{path}: line {lineno}: missing or empty 'task_id'")
        if not isinstance(name, str) or not name:
            raise DataError(f"{path}: line {lineno}: missing or empty 'name'")
        tasks.append(
            TaskRecord(
                task_id=task_id,
                name=name,
                partition=obj.get("partition", UNKNOWN),
                main_object=obj.get("main_object"),
            )
        )
    return TaskRegistry(tasks)


def _maybe_read_rows(
    path: Path, embeddings_path: str | Path | None
) -> np.ndarray | None:
    candidate = Path(embeddings_path) if embeddings_path else default_embeddings_path(path)
    if candidate.exists():
        return read_embedding_file(candidate)
    return None


def save_step_corpus(
    corpus: StepCorpus, path: str | Path, inline: bool = True
) -> None:
    """Write ``steps.jsonl``; with ``inline=False`` embeddings go to the companion file."""
    path = Path(path)
    matrix_rows: list[np.ndarray] = []
    with open(path, "w", encoding="utf-8") as fh:
        for step in corpus:
            obj: dict = {"id": step.step_id, "text": step.text}
            if step.embedding is not None:
                if inline:
                    obj["embedding"] = [_format_float(x) for x in step.embedding]
                else:
                    obj["embedding_ref"] = len(matrix_rows)
                    matrix_rows.append(step.embedding)
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    if matrix_rows:
        write_embedding_file(default_embeddings_path(path), np.stack(matrix_rows))


def save_video_corpus(
    videos: VideoCorpus, path: str | Path, inline: bool = True
) -> None:
    """Write ``videos.jsonl``; with ``inline=False`` embeddings go to the companion file."""
    path = Path(path)
    matrix_rows: list[np.ndarray] = []

    def emit_vector(vec: np.ndarray, obj: dict, key: str, ref_key: str) -> None:
        if inline:
            obj[key] = [_format_float(x) for x in vec]
        else:
            obj[ref_key] = len(matrix_rows)
            matrix_rows.append(vec)

    with open(path, "w", encoding="utf-8") as fh:
        for video in videos:
            clips = []
            for clip in video.clips:
                clip_obj: dict = {
                    "clip_id": clip.clip_id,
                    "start_s": clip.start_s,
                    "end_s": clip.end_s,
                }
                emit_vector(clip.embedding, clip_obj, "embedding", "embedding_ref")
                if clip.seg_embedding is not None:
                    emit_vector(clip.seg_embedding, clip_obj, "seg_embedding", "seg_embedding_ref")
                clips.append(clip_obj)
            obj: dict = {"video_id": video.video_id, "clips": clips}
            if video.task_id is not None:
                obj["task_id"] = video.task_id
            if video.source_rank is not None:
                obj["source_rank"] = video.source_rank
            if video.annotated_segments:
                obj["annotated_segments"] = True
            if video.segmentation is not None:
                obj["segmentation"] = video.segmentation
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    if matrix_rows:
        write_embedding_file(default_embeddings_path(path), np.stack(matrix_rows))


def save_task_registry(registry: TaskRegistry, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for task in registry:
            obj: dict = {"task_id": task.task_id, "name": task.name, "partition": task.partition}
            if task.main_object is not None:
                obj["main_object"] = task.main_object
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# schema library


@dataclass(eq=False)
class SchemaLibrary:
    """A map task_id -> Schema plus provenance metadata.

    ``meta`` must carry a ``tasks`` mapping (task_id -> task name) covering
    every schema, so libraries stay resolvable standalone.
    """

    schemas: dict[str, Schema]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        tasks = self.meta.get("tasks", {})
        missing = sorted(tid for tid in self.schemas if tid not in tasks)
        if missing:
            raise DataError(f"schema library references absent tasks: {missing}")

    def task_ids(self) -> list[str]:
        return sorted(self.schemas)

    def task_name(self, task_id: str) -> str:
        return self.meta["tasks"][task_id]

    def __len__(self) -> int:
        return len(self.schemas)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SchemaLibrary):
            return NotImplemented
        return self.schemas == other.schemas and self.meta == other.meta


def save_schema_library(library: SchemaLibrary, path: str | Path) -> None:
    doc = {
        "format_version": LIBRARY_FORMAT_VERSION,
        "meta": library.meta,
        "schemas": [
            {
                "task_id": task_id,
                "provenance": library.schemas[task_id].provenance.to_json(),
                "entries": [
                    {"text": step.text, "score": score}
                    for step, score in library.schemas[task_id].entries
                ],
            }
            for task_id in sorted(library.schemas)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_schema_library(path: str | Path) -> SchemaLibrary:
    """Load a schema library file; steps get deterministic ids and no embeddings."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed JSON: {exc.msg}") from exc
    version = doc.get("format_version")
    if version != LIBRARY_FORMAT_VERSION:
        raise DataError(
            f"{path}: unknown format_version {version!r}, expected {LIBRARY_FORMAT_VERSION}"
        )
    schemas: dict[str, Schema] = {}
    for schema_obj in doc.get("schemas", []):
        task_id = schema_obj["task_id"]
        entries = tuple(
            (
                StepSentence(step_id=f"{task_id}/e{idx:04d}", text=entry["text"]),
                float(entry["score"]),
            )
            for idx, entry in enumerate(schema_obj["entries"])
        )
        schemas[task_id] = Schema(
            task_id=task_id,
            entries=entries,
            provenance=Provenance.from_json(schema_obj.get("provenance", {"kind": "induced"})),
        )
    return SchemaLibrary(schemas=schemas, meta=doc.get("meta", {}))


# ---------------------------------------------------------------------------
# fingerprints

def corpus_fingerprint(*parts: bytes | str) -> str:
    """Short stable digest over corpus content, recorded in library metadata."""
    digest = hashlib.sha256()
    for part in parts:
        if isinstance(part, str):
            part = part.encode("utf-8")
        digest.update(part)
        digest.update(b"\x00")
    return digest.hexdigest()[:16]


def step_corpus_fingerprint(corpus: StepCorpus) -> str:
    parts: list[bytes | str] = []
    for step in corpus:
        parts.append(step.step_id)
        parts.append(step.text)
        if step.embedding is not None:
            parts.append(step.embedding.tobytes())
    return corpus_fingerprint(*parts)


def video_corpus_fingerprint(videos: VideoCorpus) -> str:
    parts: list[bytes | str] = []
    for video in videos:
        parts.append(video.video_id)
        parts.append(video.task_id or "")
        for clip in video.clips:
            parts.append(clip.clip_id)
            parts.append(clip.embedding.tobytes())
    return corpus_fingerprint(*parts)
