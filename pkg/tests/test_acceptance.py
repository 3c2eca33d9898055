"""Acceptance gate: one test per release criterion.

Every test here runs on the synthetic scoring backend alone; nothing in this
module needs a sidecar process or network access.  Measured seed-0 values are
pinned with comments where a criterion calls for a regression bound.
"""

from __future__ import annotations

import json
import logging
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from schemaforge.cli import SIDECAR_URL_ENV, main
from schemaforge.editing import EditParams
from schemaforge.evalharness import (
    ABLATIONS,
    DatasetManifest,
    compute_metrics,
    length_breakdown,
    run_experiment,
)
from schemaforge.induction import InductionParams, induce_library
from schemaforge.retrieval import RankedList, RetrievalParams, rank_pool
from schemaforge.synthworld import WorldSpec, generate, oracle_rank, planted_recovery

REPO_ROOT = Path(__file__).resolve().parents[1]

METRIC_KEYS = {"p_at_1", "r_at_5", "r_at_10", "mrr", "mean_rank", "med_rank"}


@pytest.fixture(autouse=True)
def _synthetic_backend_only(monkeypatch):
    monkeypatch.delenv(SIDECAR_URL_ENV, raising=False)
    yield
    logging.getLogger().handlers.clear()


def _induce(world, top_m):
    params = InductionParams(per_task_top_m=top_m, min_videos=1)
    return induce_library(world.registry, world.videos, world.steps, params)


BENEFIT_SPEC = WorldSpec(
    seed=0,
    n_tasks=8,
    steps_per_task=4,
    videos_per_task=3,
    clips_per_video=4,
    distractor_steps=40,
    distractor_videos=4,
    noise_sigma=0.0,
    vocab_size=400,
)


@pytest.fixture(scope="module")
def benefit_world():
    world = generate(BENEFIT_SPEC)
    return world, _induce(world, BENEFIT_SPEC.steps_per_task)


# ---------------------------------------------------------------------------
# criterion: the equation-level unit suite passes exactly


UNIT_SUITE = [
    "tests/test_corpus.py",
    "tests/test_scoring.py",
    "tests/test_segmentation.py",
    "tests/test_induction.py",
    "tests/test_editing.py",
    "tests/test_similarity.py",
    "tests/test_retrieval.py",
    "tests/test_evalharness.py",
    "tests/test_synthworld.py",
    "tests/test_cli.py",
]


@pytest.mark.acceptance(criterion="equation-level unit suite passes exactly")
def test_unit_suite_passes():
    result = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *UNIT_SUITE],
        capture_output=True,
        text=True,
        cwd=REPO_ROOT,
    )
    assert result.returncode == 0, result.stdout[-3000:] + result.stderr[-1000:]


# ---------------------------------------------------------------------------
# criterion: engine rankings equal the brute-force oracle byte for byte


EQUIV_TEMPLATES = [
    dict(n_tasks=4, steps_per_task=3, videos_per_task=2, clips_per_video=3,
         distractor_steps=15, distractor_videos=2, noise_sigma=0.0, vocab_size=250),
    dict(n_tasks=6, steps_per_task=4, videos_per_task=3, clips_per_video=4,
         distractor_steps=40, distractor_videos=4, noise_sigma=0.25, vocab_size=400),
    dict(n_tasks=8, steps_per_task=3, videos_per_task=2, clips_per_video=5,
         distractor_steps=30, distractor_videos=6, noise_sigma=0.5, vocab_size=350),
    dict(n_tasks=4, steps_per_task=5, videos_per_task=3, clips_per_video=5,
         distractor_steps=25, distractor_videos=3, noise_sigma=0.1, vocab_size=300),
    dict(n_tasks=6, steps_per_task=4, videos_per_task=2, clips_per_video=6,
         on_task_clips=4, distractor_steps=35, distractor_videos=5, noise_sigma=0.3,
         vocab_size=350),
]


@pytest.mark.acceptance(criterion="oracle equivalence on 25 seeded instances")
def test_engine_matches_oracle_on_25_seeded_worlds():
    start = time.monotonic()
    for seed in range(25):
        spec = WorldSpec(seed=seed, **EQUIV_TEMPLATES[seed % len(EQUIV_TEMPLATES)])
        world = generate(spec)
        assert len(world.videos) <= 200
        library = _induce(world, spec.steps_per_task)
        known = world.known_manifest.queries[0][0]
        unknown = world.manifest.queries[0][0]
        for lambda_ in (0.0, 0.6, 1.0):
            params = RetrievalParams(lambda_=lambda_, r=2)
            for task_id, mode in ((known, "global"), (known, "step_agg"), (unknown, "ier")):
                kwargs = dict(
                    params=params,
                    provider=world.provider,
                    library=library,
                    registry=world.registry,
                    edit_params=EditParams(),
                )
                engine = rank_pool(world.registry[task_id], world.videos, mode, **kwargs)
                oracle = oracle_rank(world.registry[task_id], world.videos, mode, **kwargs)
                assert json.dumps(engine.to_json_dict(), sort_keys=True) == json.dumps(
                    oracle.to_json_dict(), sort_keys=True
                ), f"seed={seed} mode={mode} lambda={lambda_}"
    assert time.monotonic() - start < 60.0


# ---------------------------------------------------------------------------
# criterion: planted schemas are recovered from the step soup


RECOVERY_BASE = dict(
    n_tasks=20,
    steps_per_task=8,
    videos_per_task=5,
    clips_per_video=8,
    distractor_steps=200,
    distractor_videos=10,
    vocab_size=500,
    embed_dim=1024,
)


@pytest.mark.acceptance(criterion="planted-schema recovery at sigma 0 and 0.5")
def test_planted_schemas_recovered():
    rates = {}
    for sigma in (0.0, 0.5):
        world = generate(WorldSpec(seed=0, noise_sigma=sigma, **RECOVERY_BASE))
        library = _induce(world, 100)
        rates[sigma] = planted_recovery(world, library)
    assert rates[0.0] == 1.0
    assert rates[0.5] >= 0.8
    # seed-0 measurement pinned as a regression value
    assert rates[0.5] == 1.0


# ---------------------------------------------------------------------------
# criterion: edited-schema retrieval strictly beats global matching


@pytest.mark.acceptance(criterion="schema benefit on noun-swapped unseen tasks")
def test_edited_schemas_strictly_beat_global(benefit_world):
    world, library = benefit_world
    grid = [
        {"name": "global", "mode": "global", "lambda": 0.6, "beta": 0.8, "seed": 0},
        {"name": "ier", "mode": "ier", "r": 1, "lambda": 0.6, "beta": 0.8, "seed": 0},
    ]
    reports = {
        r.config["name"]: r.metrics
        for r in run_experiment(
            world.manifest, grid, world.videos, world.registry, library, world.provider
        )
    }
    assert reports["ier"]["mrr"] > reports["global"]["mrr"]
    assert reports["ier"]["p_at_1"] > reports["global"]["p_at_1"]


# ---------------------------------------------------------------------------
# criterion: ablations all run, report fully, and order sensibly


@pytest.mark.acceptance(criterion="ablation coverage and full >= -all ordering")
def test_ablation_grid_runs_and_orders(benefit_world):
    world, library = benefit_world
    grid = [
        {
            "name": f"ier {ablation}",
            "mode": "ier",
            "r": 1,
            "lambda": 0.6,
            "beta": 0.8,
            "seed": 0,
            "ablation": ablation,
        }
        for ablation in sorted(ABLATIONS)
    ]
    reports = {
        r.config["ablation"]: r.metrics
        for r in run_experiment(
            world.manifest, grid, world.videos, world.registry, library, world.provider
        )
    }
    assert set(reports) == set(ABLATIONS)
    for metrics in reports.values():
        assert set(metrics) == METRIC_KEYS
    assert reports["full"]["mrr"] >= reports["-all"]["mrr"]


# ---------------------------------------------------------------------------
# criterion: the schema advantage does not shrink on longer videos


@pytest.mark.acceptance(criterion="rank gap non-decreasing with video length")
def test_schema_advantage_grows_with_video_length():
    spec = WorldSpec(
        seed=0,
        n_tasks=8,
        steps_per_task=4,
        videos_per_task=3,
        clips_per_video=5,
        clips_per_video_choices=(5, 10),
        on_task_clips=4,
        confusable_density=0.6,
        distractor_steps=40,
        distractor_videos=4,
        noise_sigma=0.0,
        vocab_size=400,
    )
    world = generate(spec)
    library = _induce(world, spec.steps_per_task)
    params = RetrievalParams(lambda_=0.6, r=1)
    by_mode = {}
    for mode in ("global", "ier"):
        by_mode[mode] = [
            rank_pool(
                world.registry[qid], world.videos, mode,
                params=params, provider=world.provider,
                library=library, registry=world.registry,
            )
            for qid, _ in world.manifest.queries
        ]
    rows = length_breakdown(by_mode, world.manifest, world.videos, [(5, 5), (10, 10)])
    mean_rank = {(row["length_low"], row["mode"]): row["mean_rank"] for row in rows}
    gap_short = mean_rank[(5, "global")] - mean_rank[(5, "ier")]
    gap_long = mean_rank[(10, "global")] - mean_rank[(10, "ier")]
    assert gap_long >= gap_short
    # seed-0 measurement pinned: 0.5 on 5-clip videos, 3.0 on 10-clip videos
    assert (gap_short, gap_long) == (0.5, 3.0)


# ---------------------------------------------------------------------------
# criterion: metric definitions and invariances


def _ranking(query, ordered_ids):
    entries = tuple((vid, 1.0 - i * (1.0 / 1024)) for i, vid in enumerate(ordered_ids))
    return RankedList(query_task_id=query, mode="global", entries=entries)


@pytest.mark.acceptance(criterion="metrics conformance")
def test_metric_definitions_and_invariances():
    pool = [f"v{i:03d}" for i in range(32)]

    # median of an even rank count averages the two middle values: {4, 15} -> 9.5
    manifest = DatasetManifest(
        name="med", pool="pool",
        queries=(("q0", frozenset({pool[3]})), ("q1", frozenset({pool[14]}))),
    )
    rankings = [_ranking("q0", pool), _ranking("q1", pool)]
    assert compute_metrics(rankings, manifest).metrics["med_rank"] == 9.5

    # recall at k never decreases in k, over 100 seeded random rankings
    ks = (1, 2, 3, 5, 8, 13, 21, 32)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        order = [pool[i] for i in rng.permutation(len(pool))]
        n_relevant = int(rng.integers(1, 9))
        relevant = frozenset(
            pool[i] for i in rng.choice(len(pool), size=n_relevant, replace=False)
        )
        manifest = DatasetManifest(name="mono", pool="pool", queries=(("q0", relevant),))
        metrics = compute_metrics([_ranking("q0", order)], manifest, ks=ks).metrics
        recalls = [metrics[f"r_at_{k}"] for k in ks]
        assert all(a <= b for a, b in zip(recalls, recalls[1:])), seed
        assert recalls[-1] == 1.0

    # permuting the query order changes no metric at all; relevant-set sizes
    # and ranks are powers of two so the float sums commute exactly
    queries = (
        ("q0", frozenset(pool[:1])),
        ("q1", frozenset(pool[1:3])),
        ("q2", frozenset(pool[3:7])),
        ("q3", frozenset(pool[7:9])),
    )
    rankings = [_ranking(qid, pool) for qid, _ in queries]
    forward = DatasetManifest(name="perm", pool="pool", queries=queries)
    backward = DatasetManifest(name="perm", pool="pool", queries=queries[::-1])
    metrics_forward = compute_metrics(rankings, forward).metrics
    metrics_backward = compute_metrics(rankings[::-1], backward).metrics
    assert metrics_forward == metrics_backward
    assert set(metrics_forward) == METRIC_KEYS


# ---------------------------------------------------------------------------
# criterion: CLI pipelines are byte-deterministic across runs and workers


PIPELINE_SPEC = {
    "seed": 0,
    "n_tasks": 4,
    "steps_per_task": 3,
    "videos_per_task": 2,
    "clips_per_video": 6,
    "distractor_steps": 12,
    "distractor_videos": 2,
    "noise_sigma": 0.0,
    "vocab_size": 200,
}


def _run_pipeline(base: Path, spec_path: Path, workers: str) -> dict[str, bytes]:
    world = base / "world"
    assert main(["synth", "--spec", str(spec_path), "--out", str(world),
                 "--workers", workers]) == 0
    meta = world / "world_meta.json"

    seg = base / "seg"
    seg.mkdir()
    assert main(["preprocess", "--videos", str(world / "videos.jsonl"),
                 "--out", str(seg / "videos.jsonl"), "--workers", workers]) == 0

    library = base / "library.json"
    assert main(["induce", "--tasks", str(world / "tasks.jsonl"),
                 "--videos", str(seg / "videos.jsonl"),
                 "--steps", str(world / "steps.jsonl"),
                 "--out", str(library), "--top-m", "3", "--min-videos", "1",
                 "--workers", workers]) == 0

    assert main(["edit", "--library", str(library), "--source", "t000",
                 "--target", "t002", "--out", str(base / "edited.json"),
                 "--trace", str(base / "trace.json"),
                 "--world-meta", str(meta), "--workers", workers]) == 0

    assert main(["retrieve", "--query", "t002", "--pool", str(world / "videos.jsonl"),
                 "--library", str(library), "--mode", "ier", "--r", "2",
                 "--out", str(base / "ranked.json"),
                 "--world-meta", str(meta), "--workers", workers]) == 0

    grid = base / "grid.json"
    grid.write_text(json.dumps([
        {"name": "global", "mode": "global"},
        {"name": "ier", "mode": "ier", "r": 2},
        {"name": "ier -mask", "mode": "ier", "r": 2, "ablation": "-mask"},
    ]), encoding="utf-8")
    assert main(["eval", "--manifest", str(world / "manifest.jsonl"),
                 "--pool", str(world / "videos.jsonl"),
                 "--tasks", str(world / "tasks.jsonl"),
                 "--library", str(library), "--grid", str(grid),
                 "--out", str(base / "reports"),
                 "--world-meta", str(meta), "--workers", workers]) == 0

    return {
        str(path.relative_to(base)): path.read_bytes()
        for path in sorted(base.rglob("*"))
        if path.is_file()
    }


@pytest.mark.acceptance(criterion="pipeline determinism for workers 1 vs 8")
def test_cli_pipeline_byte_identical_across_runs_and_workers(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(PIPELINE_SPEC), encoding="utf-8")
    trees = []
    for run_name, workers in (("run-w1", "1"), ("run-w8", "8"), ("rerun-w1", "1")):
        base = tmp_path / run_name
        base.mkdir()
        trees.append(_run_pipeline(base, spec_path, workers))
    assert sorted(trees[0]) == sorted(trees[1]) == sorted(trees[2])
    assert trees[0] == trees[1] == trees[2]
