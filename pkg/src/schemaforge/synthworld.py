"""Deterministic planted-schema worlds plus a brute-force ranking oracle.

A world plants ground-truth step schemata for a set of verb-noun tasks,
derives videos as noisy copies of those step embeddings under the synthetic
scorer, and pairs every "unknown" task with a known task that differs only
in its noun, so schema editing has a correct move.  Confusable distractor
videos reuse the unknown tasks' nouns, which is what makes plain global
matching err while schema-guided ranking stays correct.

:func:`oracle_rank` re-implements the three ranking modes as naive loops,
sharing no code with the retrieval module, and is the ground truth the
engine's ranked lists are compared against byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (
    KNOWN,
    UNKNOWN,
    ClipRecord,
    SchemaLibrary,
    StepCorpus,
    StepSentence,
    TaskRecord,
    TaskRegistry,
    VideoCorpus,
    VideoRecord,
    save_step_corpus,
    save_task_registry,
    save_video_corpus,
)
from .editing import EditParams, edit_schema
from .errors import DataError
from .evalharness import DatasetManifest, save_manifest
from .retrieval import MODES, RankedList, RetrievalParams
from .scoring import SyntheticProvider, cosine, dot_score, fnv1a64
from .similarity import TaskImageRegistry, top_r_sources

logger = logging.getLogger(__name__)

_SYLLABLES = (
    "ba", "re", "mi", "to", "ka", "lu", "ne", "so", "vi", "du", "pa", "ro",
)
MAX_VOCAB = len(_SYLLABLES) ** 3

POOL_FILE = "videos.jsonl"


def _pseudo_word(index: int) -> str:
    base = len(_SYLLABLES)
    a, rest = divmod(index, base * base)
    b, c = divmod(rest, base)
    return _SYLLABLES[a] + _SYLLABLES[b] + _SYLLABLES[c]


class _WordBank:
    """Hands out distinct pseudo-words, erroring when the vocabulary runs dry."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self.next_index = 0

    def take(self, count: int, purpose: str) -> list[str]:
        if self.next_index + count > self.vocab_size:
            raise DataError(
                f"vocab too small for requested distinct tasks: need "
                f"{self.next_index + count} words ({purpose}) but vocab_size is "
                f"{self.vocab_size}"
            )
        words = [_pseudo_word(i) for i in range(self.next_index, self.next_index + count)]
        self.next_index += count
        return words


@dataclass(frozen=True)
class WorldSpec:
    """Parameters of a planted world.

    ``clips_per_video_choices`` cycles video lengths across tasks (for the
    length-trend experiments); ``on_task_clips`` caps how many clips of each
    task video derive from real steps, the rest being filler.  Confusable
    knobs control how many noun-sharing distractor steps and videos each
    unknown task gets.
    """

    seed: int = 0
    n_tasks: int = 12
    steps_per_task: int = 8
    videos_per_task: int = 5
    clips_per_video: int = 5
    distractor_steps: int = 200
    distractor_videos: int = 10
    noise_sigma: float = 0.0
    vocab_size: int = 1000
    known_fraction: float = 0.5
    embed_dim: int = 256
    clips_per_video_choices: tuple[int, ...] | None = None
    on_task_clips: int | None = None
    confusable_steps_per_unknown: int = 3
    confusable_videos_per_unknown: int = 3
    confusable_density: float = 1.0

    def __post_init__(self) -> None:
        positive = {
            "n_tasks": self.n_tasks,
            "steps_per_task": self.steps_per_task,
            "videos_per_task": self.videos_per_task,
            "clips_per_video": self.clips_per_video,
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
        }
        for name, value in positive.items():
            if value <= 0:
                raise DataError(f"world spec field {name} must be positive, got {value}")
        if self.distractor_steps < 0 or self.distractor_videos < 0:
            raise DataError("distractor counts must be >= 0")
        if not 0 < self.known_fraction < 1:
            raise DataError(
                f"known_fraction must be in (0, 1), got {self.known_fraction}"
            )
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")
        if self.vocab_size > MAX_VOCAB:
            raise DataError(f"vocab_size cannot exceed {MAX_VOCAB}")
        if not 0 <= self.confusable_density <= 1:
            raise DataError("confusable_density must be in [0, 1]")

    def as_dict(self) -> dict:
        out = {
            "seed": self.seed,
            "n_tasks": self.n_tasks,
            "steps_per_task": self.steps_per_task,
            "videos_per_task": self.videos_per_task,
            "clips_per_video": self.clips_per_video,
            "distractor_steps": self.distractor_steps,
            "distractor_videos": self.distractor_videos,
            "noise_sigma": self.noise_sigma,
            "vocab_size": self.vocab_size,
            "known_fraction": self.known_fraction,
            "embed_dim": self.embed_dim,
            "confusable_steps_per_unknown": self.confusable_steps_per_unknown,
            "confusable_videos_per_unknown": self.confusable_videos_per_unknown,
            "confusable_density": self.confusable_density,
        }
        if self.clips_per_video_choices is not None:
            out["clips_per_video_choices"] = list(self.clips_per_video_choices)
        if self.on_task_clips is not None:
            out["on_task_clips"] = self.on_task_clips
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "WorldSpec":
        kwargs = dict(obj)
        if "clips_per_video_choices" in kwargs and kwargs["clips_per_video_choices"] is not None:
            kwargs["clips_per_video_choices"] = tuple(kwargs["clips_per_video_choices"])
        return cls(**kwargs)


@dataclass
class World:
    """A generated world: corpora, ground truth, manifests, and the provider
    wired with the world's lexicon and masked-fill table."""

    spec: WorldSpec
    registry: TaskRegistry
    steps: StepCorpus
    videos: VideoCorpus
    truth: dict[str, tuple[str, ...]]
    pairs: dict[str, str]
    manifest: DatasetManifest
    known_manifest: DatasetManifest
    provider: SyntheticProvider
    lexicon: dict[str, str] = field(default_factory=dict)
    mlm_table: dict = field(default_factory=dict)
    # clip_id -> corpus step_id of the clip's generating step; clips generated
    # from held-out (unknown-task) truth steps have no entry
    clip_origins: dict[str, str] = field(default_factory=dict)


def _stream(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, fnv1a64(label))))


def _covering_slots(
    n_slots: int, n_steps: int, rng: np.random.Generator
) -> list[int]:
    """A shuffled slot list hitting every step index at least once when
    n_slots >= n_steps."""
    slots: list[int] = []
    while len(slots) < n_slots:
        slots.extend(int(i) for i in rng.permutation(n_steps))
    return slots[:n_slots]


def generate(spec: WorldSpec) -> World:
    """Build the full world deterministically from the spec seed."""
    n_known = min(max(1, round(spec.n_tasks * spec.known_fraction)), spec.n_tasks - 1)
    n_unknown = spec.n_tasks - n_known

    bank = _WordBank(spec.vocab_size)
    task_verbs = bank.take(n_known, "task verbs")
    task_nouns = bank.take(spec.n_tasks, "task nouns")
    extras = bank.take(spec.n_tasks, "per-task extras")
    step_verbs = bank.take(spec.steps_per_task, "step verbs")
    tools = bank.take(n_known * spec.steps_per_task, "step tools")
    conf_count = n_unknown * spec.confusable_steps_per_unknown
    conf_tools = bank.take(conf_count, "confusable tools")
    pure_count = max(spec.distractor_steps - conf_count, 0)
    d_nouns = bank.take(max(min(pure_count, 30), 1), "distractor nouns")
    d_extras = bank.take(max(min(pure_count, 15), 1), "distractor extras")
    d_tools = bank.take(pure_count, "distractor tools")

    lexicon: dict[str, str] = {w: "VB" for w in task_verbs + step_verbs}
    for w in task_nouns + extras + tools + conf_tools + d_nouns + d_extras + d_tools:
        lexicon[w] = "NN"

    # tasks: unknowns share their pair's verb so textual similarity links them
    tasks: list[TaskRecord] = []
    pairs: dict[str, str] = {}
    known_ids = [f"t{i:03d}" for i in range(n_known)]
    for i in range(n_known):
        tasks.append(
            TaskRecord(
                task_id=known_ids[i],
                name=f"{task_verbs[i].capitalize()} {task_nouns[i].capitalize()}",
                partition=KNOWN,
            )
        )
    for j in range(n_unknown):
        pair = j % n_known
        task_id = f"t{n_known + j:03d}"
        pairs[task_id] = known_ids[pair]
        tasks.append(
            TaskRecord(
                task_id=task_id,
                name=f"{task_verbs[pair].capitalize()} "
                f"{task_nouns[n_known + j].capitalize()}",
                partition=UNKNOWN,
            )
        )
    registry = TaskRegistry(tasks)

    def step_text(task_index: int, j: int) -> str:
        pair = task_index if task_index < n_known else (task_index - n_known) % n_known
        return (
            f"{step_verbs[j].capitalize()} the {task_nouns[task_index]} with the "
            f"{tools[pair * spec.steps_per_task + j]} and the {extras[task_index]}."
        )

    truth: dict[str, tuple[str, ...]] = {}
    corpus_steps: list[StepSentence] = []
    for index, task in enumerate(tasks):
        texts = tuple(step_text(index, j) for j in range(spec.steps_per_task))
        truth[task.task_id] = texts
        if task.partition == KNOWN:
            corpus_steps.extend(
                StepSentence(step_id=f"s_{task.task_id}_{j:02d}", text=text)
                for j, text in enumerate(texts)
            )

    # confusable distractor steps reuse unknown nouns; pure distractors don't
    conf_texts: dict[str, list[str]] = {}
    for j in range(n_unknown):
        task_id = f"t{n_known + j:03d}"
        noun = task_nouns[n_known + j]
        conf_texts[task_id] = []
        for c in range(spec.confusable_steps_per_unknown):
            text = (
                f"{step_verbs[c % spec.steps_per_task].capitalize()} the {noun} "
                f"with the {conf_tools[j * spec.confusable_steps_per_unknown + c]} "
                f"and the {d_extras[c % len(d_extras)]}."
            )
            conf_texts[task_id].append(text)
            corpus_steps.append(
                StepSentence(step_id=f"s_x_conf_{task_id}_{c:02d}", text=text)
            )
    pure_texts: list[str] = []
    for i in range(pure_count):
        text = (
            f"{step_verbs[i % spec.steps_per_task].capitalize()} the "
            f"{d_nouns[i % len(d_nouns)]} with the {d_tools[i]} and the "
            f"{d_extras[i % len(d_extras)]}."
        )
        pure_texts.append(text)
        corpus_steps.append(StepSentence(step_id=f"s_x_dist_{i:04d}", text=text))

    # masked-fill table: in a prompt about the unknown task, the paired known
    # task's extra word wants to become the unknown's extra word
    mlm_table: dict = {}
    for j in range(n_unknown):
        task_id = f"t{n_known + j:03d}"
        pair_index = j % n_known
        unknown_name = tasks[n_known + j].name.lower()
        mlm_table[(unknown_name, extras[pair_index])] = extras[n_known + j]

    provider = SyntheticProvider(dim=spec.embed_dim, lexicon=lexicon, mlm_table=mlm_table)
    embeddings = provider.embed_text([s.text for s in corpus_steps], space="joint")
    corpus_steps = [
        StepSentence(step_id=s.step_id, text=s.text, embedding=embeddings[i])
        for i, s in enumerate(corpus_steps)
    ]
    step_corpus = StepCorpus(corpus_steps)

    truth_embeddings = {
        task_id: provider.embed_text(list(texts), space="joint")
        for task_id, texts in truth.items()
    }
    conf_embeddings = {
        task_id: provider.embed_text(texts, space="joint")
        for task_id, texts in conf_texts.items()
    }
    pure_embeddings = (
        provider.embed_text(pure_texts, space="joint") if pure_texts else None
    )

    def make_clip(video_id: str, j: int, base: np.ndarray, rng) -> ClipRecord:
        return ClipRecord(
            clip_id=f"c_{video_id}_{j:02d}",
            video_id=video_id,
            start_s=j * 5.0,
            end_s=(j + 1) * 5.0,
            embedding=provider.noisy_copy(base, spec.noise_sigma, rng),
        )

    videos: list[VideoRecord] = []
    clip_origins: dict[str, str] = {}
    for index, task in enumerate(tasks):
        if spec.clips_per_video_choices:
            cpv = spec.clips_per_video_choices[index % len(spec.clips_per_video_choices)]
        else:
            cpv = spec.clips_per_video
        on_task = min(spec.on_task_clips or cpv, cpv)
        slot_rng = _stream(spec.seed, f"slots/{task.task_id}")
        slots = _covering_slots(
            spec.videos_per_task * on_task, spec.steps_per_task, slot_rng
        )
        for v in range(spec.videos_per_task):
            video_id = f"v_{task.task_id}_{v:02d}"
            clip_rng = _stream(spec.seed, f"clips/{video_id}")
            clips = []
            for j in range(on_task):
                step_index = slots[v * on_task + j]
                base = truth_embeddings[task.task_id][step_index]
                clip = make_clip(video_id, j, base, clip_rng)
                if task.partition == KNOWN:
                    clip_origins[clip.clip_id] = f"s_{task.task_id}_{step_index:02d}"
                clips.append(clip)
            for j in range(on_task, cpv):
                if pure_embeddings is None:
                    raise DataError(
                        "filler clips need distractor steps; raise distractor_steps"
                    )
                pure_index = int(clip_rng.integers(len(pure_texts)))
                clip = make_clip(video_id, j, pure_embeddings[pure_index], clip_rng)
                clip_origins[clip.clip_id] = f"s_x_dist_{pure_index:04d}"
                clips.append(clip)
            videos.append(
                VideoRecord(video_id=video_id, clips=tuple(clips), task_id=task.task_id)
            )

    for j in range(n_unknown):
        task_id = f"t{n_known + j:03d}"
        noun_rows = conf_embeddings[task_id]
        for c in range(spec.confusable_videos_per_unknown):
            video_id = f"v_conf_{task_id}_{c:02d}"
            clip_rng = _stream(spec.seed, f"clips/{video_id}")
            cpv = spec.clips_per_video
            n_noun = round(spec.confusable_density * cpv)
            clips = []
            for k in range(cpv):
                if k < n_noun or pure_embeddings is None:
                    base = noun_rows[k % len(noun_rows)]
                    origin = f"s_x_conf_{task_id}_{k % len(noun_rows):02d}"
                else:
                    pure_index = int(clip_rng.integers(len(pure_texts)))
                    base = pure_embeddings[pure_index]
                    origin = f"s_x_dist_{pure_index:04d}"
                clip = make_clip(video_id, k, base, clip_rng)
                clip_origins[clip.clip_id] = origin
                clips.append(clip)
            videos.append(VideoRecord(video_id=video_id, clips=tuple(clips)))

    for i in range(spec.distractor_videos):
        if pure_embeddings is None:
            break
        video_id = f"v_dist_{i:03d}"
        clip_rng = _stream(spec.seed, f"clips/{video_id}")
        clips = []
        for j in range(spec.clips_per_video):
            pure_index = int(clip_rng.integers(len(pure_texts)))
            clip = make_clip(video_id, j, pure_embeddings[pure_index], clip_rng)
            clip_origins[clip.clip_id] = f"s_x_dist_{pure_index:04d}"
            clips.append(clip)
        videos.append(VideoRecord(video_id=video_id, clips=tuple(clips)))

    video_corpus = VideoCorpus(videos)

    def manifest_for(partition: str, name: str) -> DatasetManifest:
        queries = []
        for task in tasks:
            if task.partition != partition:
                continue
            relevant = frozenset(
                v.video_id for v in video_corpus.videos_for_task(task.task_id)
            )
            queries.append((task.task_id, relevant))
        return DatasetManifest(name=name, pool=POOL_FILE, queries=tuple(queries))

    world = World(
        spec=spec,
        registry=registry,
        steps=step_corpus,
        videos=video_corpus,
        truth=truth,
        pairs=pairs,
        manifest=manifest_for(UNKNOWN, f"synth-unseen-{spec.seed}"),
        known_manifest=manifest_for(KNOWN, f"synth-known-{spec.seed}"),
        provider=provider,
        lexicon=lexicon,
        mlm_table=mlm_table,
        clip_origins=clip_origins,
    )
    logger.info(
        "generated world seed=%d: %d tasks (%d known), %d steps, %d videos",
        spec.seed, spec.n_tasks, n_known, len(step_corpus), len(video_corpus),
    )
    return world


def planted_recovery(world: World, library: SchemaLibrary) -> float:
    """Fraction of planted step sentences present in the induced schemas,
    averaged over the schema-bearing tasks."""
    rates = []
    for task_id, schema in sorted(library.schemas.items()):
        planted = set(world.truth[task_id])
        found = planted & set(schema.texts())
        rates.append(len(found) / len(planted))
    if not rates:
        raise DataError("library has no schemas to score recovery on")
    return sum(rates) / len(rates)


# ---------------------------------------------------------------------------
# world serialization


def save_world(world: World, outdir: str | Path) -> dict[str, Path]:
    """Write the standard corpus files plus world metadata; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "tasks": outdir / "tasks.jsonl",
        "steps": outdir / "steps.jsonl",
        "videos": outdir / POOL_FILE,
        "manifest": outdir / "manifest.jsonl",
        "known_manifest": outdir / "known_manifest.jsonl",
        "meta": outdir / "world_meta.json",
    }
    save_task_registry(world.registry, paths["tasks"])
    save_step_corpus(world.steps, paths["steps"], inline=False)
    save_video_corpus(world.videos, paths["videos"], inline=False)
    save_manifest(world.manifest, paths["manifest"])
    save_manifest(world.known_manifest, paths["known_manifest"])
    meta = {
        "spec": world.spec.as_dict(),
        "truth": {k: list(v) for k, v in sorted(world.truth.items())},
        "pairs": dict(sorted(world.pairs.items())),
        "lexicon": dict(sorted(world.lexicon.items())),
        "mlm_table": [
            {
                "context": key[0] if isinstance(key, tuple) else None,
                "word": key[1] if isinstance(key, tuple) else key,
                "replacement": value,
            }
            for key, value in sorted(
                world.mlm_table.items(), key=lambda kv: str(kv[0])
            )
        ],
    }
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def load_world_provider(meta_path: str | Path) -> SyntheticProvider:
    """Rebuild the synthetic provider from a saved world's metadata file."""
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    table: dict = {}
    for row in meta.get("mlm_table", []):
        key = (row["context"], row["word"]) if row.get("context") else row["word"]
        table[key] = row["replacement"]
    return SyntheticProvider(
        dim=meta.get("spec", {}).get("embed_dim", 256),
        lexicon=meta.get("lexicon"),
        mlm_table=table,
    )


# ---------------------------------------------------------------------------
# brute-force oracle
#
# The functions below re-derive the three ranking modes with plain loops and
# deliberately import nothing from the retrieval module except the RankedList
# container.  Reduction order mirrors the engine's documented fixed order
# (corpus order for videos and clips, schema order for steps), so agreement
# is expected bit for bit, and any divergence indicates an engine bug.


def _oracle_f(u: np.ndarray, v: np.ndarray, normalize: bool) -> float:
    return cosine(u, v) if normalize else dot_score(u, v)


def _oracle_m_task(query_embedding, video, normalize: bool) -> float:
    total = 0.0
    for clip in video.clips:
        total += _oracle_f(clip.embedding, query_embedding, normalize)
    return total / len(video.clips)


def _oracle_m_step(schema, video, normalize: bool) -> tuple[float, list[dict]]:
    total = 0.0
    alignment = []
    for step, _score in schema.entries:
        best = None
        best_clip = None
        for clip in video.clips:
            value = _oracle_f(clip.embedding, step.embedding, normalize)
            if best is None or value > best:
                best = value
                best_clip = clip.clip_id
        total += best
        alignment.append({"step": step.text, "clip_id": best_clip, "f": best})
    return total / len(schema.entries), alignment


def oracle_rank(
    query: TaskRecord,
    pool: VideoCorpus,
    mode: str,
    params: RetrievalParams | None = None,
    provider=None,
    library: SchemaLibrary | None = None,
    registry: TaskRegistry | None = None,
    images: TaskImageRegistry | None = None,
    edit_params: EditParams | None = None,
) -> RankedList:
    """Naive re-evaluation of the three ranking modes."""
    if mode not in MODES:
        raise DataError(f"unknown retrieval mode {mode!r}")
    params = params or RetrievalParams()
    query_embedding = provider.embed_text([query.name], space="joint")[0]

    schema = None
    sources: list[tuple[float, object, str]] = []
    if mode == "step_agg":
        if library is None or query.task_id not in library.schemas:
            raise DataError(
                f"step aggregation needs an induced schema for task {query.task_id!r}"
            )
        schema = library.schemas[query.task_id]
    elif mode == "ier":
        if library is None:
            raise DataError("ier mode needs a schema library")
        candidates = []
        for task_id in sorted(library.schemas):
            if registry is not None and task_id in registry:
                candidates.append(registry[task_id])
            else:
                candidates.append(
                    TaskRecord(task_id=task_id, name=library.task_name(task_id))
                )
        ranked_sources = top_r_sources(query, candidates, params.r, provider, images)
        for task, score in ranked_sources:
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
                continue
            sources.append((score.g, edited, task.task_id))

    rows = []
    for video in pool:
        task_term = _oracle_m_task(query_embedding, video, params.normalize)
        if mode == "global":
            rows.append((video.video_id, task_term, {"m_task": task_term}, None))
            continue
        if mode == "step_agg":
            step_term, alignment = _oracle_m_step(schema, video, params.normalize)
            score = (1.0 - params.lambda_) * task_term + params.lambda_ * step_term
            rows.append(
                (
                    video.video_id,
                    score,
                    {"m_task": task_term, "m_step": {query.task_id: step_term}},
                    alignment,
                )
            )
            continue
        if not sources:
            rows.append(
                (video.video_id, task_term, {"m_task": task_term, "m_step": {}}, None)
            )
            continue
        contribution = 0.0
        weight_total = 0.0
        step_terms = {}
        alignment = None
        for weight, edited, source_id in sources:
            step_term, source_alignment = _oracle_m_step(edited, video, params.normalize)
            if alignment is None:
                alignment = source_alignment
            step_terms[source_id] = step_term
            contribution += weight * step_term
            weight_total += weight
        denominator = weight_total if params.normalize_g else float(len(sources))
        if denominator == 0.0:
            raise DataError("source similarity weights sum to zero; cannot normalize")
        score = (1.0 - params.lambda_) * task_term + (params.lambda_ / denominator) * contribution
        rows.append(
            (video.video_id, score, {"m_task": task_term, "m_step": step_terms}, alignment)
        )

    rows.sort(key=lambda row: (-row[1], row[0]))
    return RankedList(
        query_task_id=query.task_id,
        mode=mode,
        entries=tuple((vid, score) for vid, score, _, _ in rows),
        component_scores={vid: comps for vid, _, comps, _ in rows},
        alignments={
            vid: alignment
            for vid, _, _, alignment in rows[: params.explain_top_k]
            if alignment is not None
        },
    )


def oracle_first_rank(ranked: RankedList, relevant: frozenset[str]) -> int:
    """Independent first-relevant-rank used to cross-check the harness."""
    for position, (video_id, _score) in enumerate(ranked.entries, start=1):
        if video_id in relevant:
            return position
    raise DataError("no relevant video in the pool")


def chance_p_at_1(manifest: DatasetManifest, pool: VideoCorpus) -> float:
    """Expected precision at 1 of a uniformly random ranking."""
    total = 0.0
    for _task_id, relevant in manifest.queries:
        total += len(relevant) / len(pool)
    return total / len(manifest.queries)
