"""Video ranking: global matching, step aggregation, multi-source scoring."""

from __future__ import annotations

import json
import logging
import math

import numpy as np
import pytest

from schemaforge.corpus import (
    ClipRecord,
    Schema,
    SchemaLibrary,
    StepSentence,
    TaskRecord,
    TaskRegistry,
    VideoCorpus,
    VideoRecord,
)
from schemaforge.editing import EditParams
from schemaforge.errors import DataError
from schemaforge.retrieval import (
    RankedList,
    RetrievalParams,
    m_agg,
    m_step,
    m_step_with_alignment,
    m_task,
    m_unseen,
    prepare_edit_sources,
    rank_pool,
)
from schemaforge.scoring import SyntheticProvider, cosine


def _exact_vec(components, dim=8):
    """Vector with the given leading components, padded with zeros, whose
    dot-product norm lands exactly on 2.0; against a one-hot query the
    cosine is then component/2, an exact power-of-two division."""
    slack = 4.0 - sum(c * c for c in components)
    assert slack > 0.0
    lo = hi = math.sqrt(slack)
    for _ in range(500):
        for w in (lo, hi):
            vec = np.zeros(dim, dtype=np.float64)
            vec[: len(components)] = components
            vec[len(components)] = w
            if math.sqrt(float(np.dot(vec, vec))) == 2.0:
                return vec
        lo = math.nextafter(lo, 0.0)
        hi = math.nextafter(hi, math.inf)
    raise AssertionError(f"no exact-norm vector for {components}")


def _one_hot(i, dim=8):
    vec = np.zeros(dim, dtype=np.float64)
    vec[i] = 1.0
    return vec


def _video(video_id, vectors):
    clips = tuple(
        ClipRecord(
            clip_id=f"c_{video_id}_{i:02d}",
            video_id=video_id,
            start_s=float(i),
            end_s=float(i + 1),
            embedding=np.asarray(vec, dtype=np.float64),
        )
        for i, vec in enumerate(vectors)
    )
    return VideoRecord(video_id=video_id, clips=clips)


def _schema(task_id, step_vectors, texts=None):
    entries = []
    for i, vec in enumerate(step_vectors):
        text = texts[i] if texts else f"Step number {i}."
        entries.append(
            (
                StepSentence(
                    step_id=f"s_{task_id}_{i:02d}",
                    text=text,
                    embedding=None if vec is None else np.asarray(vec, dtype=np.float64),
                ),
                1.0 - 0.1 * i,
            )
        )
    return Schema.build(task_id=task_id, scored_steps=entries)


# ---------------------------------------------------------------------------
# global matching


def test_m_task_single_clip_equals_clip_similarity():
    query = _one_hot(0)
    clip_vec = np.array([0.3, 0.7, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0])
    video = _video("v", [clip_vec])
    assert m_task(query, video) == cosine(clip_vec, query)


def test_m_task_is_mean_of_clip_scores():
    query = _one_hot(0)
    video = _video(
        "v", [_exact_vec([a]) for a in (0.4, 0.8, 1.2)]
    )  # clip scores 0.2, 0.4, 0.6
    assert m_task(query, video) == pytest.approx(0.4, abs=1e-9)


def test_m_task_clip_order_invariant():
    query = _one_hot(0)
    vectors = [_exact_vec([a]) for a in (0.5, 1.0, 1.5)]  # dyadic scores
    forward = m_task(query, _video("v", vectors))
    backward = m_task(query, _video("v", vectors[::-1]))
    assert forward == backward


# ---------------------------------------------------------------------------
# step aggregation


def test_m_step_single_step_takes_best_clip():
    schema = _schema("t", [_one_hot(0)])
    video = _video("v", [_exact_vec([0.2]), _exact_vec([1.8])])  # scores 0.1, 0.9
    score, alignment = m_step_with_alignment(schema, video)
    assert score == pytest.approx(0.9, abs=1e-9)
    assert alignment == [
        {"step": "Step number 0.", "clip_id": "c_v_01", "f": pytest.approx(0.9)}
    ]


def test_m_step_means_per_step_maxima():
    schema = _schema("t", [_one_hot(0), _one_hot(1)])
    video = _video(
        "v",
        [_exact_vec([1.6, 0.0]), _exact_vec([0.0, 0.8])],  # maxima 0.8 and 0.4
    )
    assert m_step(schema, video) == pytest.approx(0.6, abs=1e-9)


def test_m_step_matches_double_loop_oracle():
    rng = np.random.default_rng(11)
    steps = rng.normal(size=(5, 8))
    clips = rng.normal(size=(6, 8))
    schema = _schema("t", list(steps))
    video = _video("v", list(clips))

    total = 0.0
    for step_vec in steps:
        total += max(cosine(clip_vec, step_vec) for clip_vec in clips)
    assert m_step(schema, video) == total / len(steps)


def test_m_step_alignment_tie_takes_first_clip():
    schema = _schema("t", [_one_hot(0)])
    vec = _exact_vec([1.0])
    video = _video("v", [vec, vec.copy()])
    _, alignment = m_step_with_alignment(schema, video)
    assert alignment[0]["clip_id"] == "c_v_00"


def test_m_step_requires_step_embeddings():
    schema = _schema("t", [None])
    with pytest.raises(DataError, match="no embedding"):
        m_step(schema, _video("v", [_one_hot(0)]))


# ---------------------------------------------------------------------------
# blended score


def test_m_agg_endpoints_are_exact():
    rng = np.random.default_rng(5)
    query = rng.normal(size=8)
    schema = _schema("t", list(rng.normal(size=(3, 8))))
    video = _video("v", list(rng.normal(size=(4, 8))))
    assert m_agg(query, schema, video, 0.0) == m_task(query, video)
    assert m_agg(query, schema, video, 1.0) == m_step(schema, video)


def test_m_agg_hand_value():
    query = _one_hot(0)
    schema = _schema("t", [_one_hot(1)])
    video = _video("v", [_exact_vec([1.0, 1.4])])  # m_task 0.5, m_step 0.7
    assert m_agg(query, schema, video, 0.6) == pytest.approx(0.62, abs=1e-9)


def test_m_agg_validates_lambda():
    schema = _schema("t", [_one_hot(1)])
    video = _video("v", [_one_hot(0)])
    with pytest.raises(DataError, match="lambda"):
        m_agg(_one_hot(0), schema, video, 1.2)
    with pytest.raises(DataError, match="lambda"):
        RetrievalParams(lambda_=-0.1)
    with pytest.raises(DataError, match=">= 1"):
        RetrievalParams(r=0)


# ---------------------------------------------------------------------------
# multi-source scoring


def test_m_unseen_hand_value():
    query = _one_hot(0)
    # single clip scores 0.2 against the query and 0.5/0.4/0.3 against the
    # three source schemas
    video = _video("v", [_exact_vec([0.4, 1.0, 0.8, 0.6])])
    sources = [
        (0.9, _schema("s1", [_one_hot(1)])),
        (0.8, _schema("s2", [_one_hot(2)])),
        (0.7, _schema("s3", [_one_hot(3)])),
    ]
    score = m_unseen(query, sources, video, lambda_=0.6)
    assert score == pytest.approx(0.276, abs=1e-9)


def test_m_unseen_single_unit_source_collapses_to_m_agg():
    rng = np.random.default_rng(9)
    query = rng.normal(size=8)
    schema = _schema("t", list(rng.normal(size=(3, 8))))
    video = _video("v", list(rng.normal(size=(4, 8))))
    assert m_unseen(query, [(1.0, schema)], video, 0.6) == m_agg(
        query, schema, video, 0.6
    )


def test_m_unseen_lambda_zero_ignores_sources():
    rng = np.random.default_rng(13)
    query = rng.normal(size=8)
    schema = _schema("t", list(rng.normal(size=(2, 8))))
    video = _video("v", list(rng.normal(size=(3, 8))))
    assert m_unseen(query, [(0.42, schema)], video, 0.0) == m_task(query, video)


def test_m_unseen_no_sources_falls_back_with_warning(caplog):
    query = _one_hot(0)
    video = _video("v", [_exact_vec([1.0])])
    with caplog.at_level(logging.WARNING, logger="schemaforge.retrieval"):
        score = m_unseen(query, [], video, 0.6)
    assert score == m_task(query, video)
    assert "without any edit sources" in caplog.text


def test_m_unseen_g_normalization_flag():
    query = _one_hot(0)
    video = _video("v", [_exact_vec([0.4, 1.0, 0.8])])  # m_task 0.2
    sources = [
        (0.5, _schema("s1", [_one_hot(1)])),  # m_step 0.5
        (0.25, _schema("s2", [_one_hot(2)])),  # m_step 0.4
    ]
    weighted = 0.5 * 0.5 + 0.25 * 0.4
    by_count = m_unseen(query, sources, video, 0.6)
    by_weight = m_unseen(query, sources, video, 0.6, normalize_g=True)
    assert by_count == pytest.approx(0.4 * 0.2 + 0.6 / 2 * weighted, abs=1e-12)
    assert by_weight == pytest.approx(0.4 * 0.2 + 0.6 / 0.75 * weighted, abs=1e-12)


def test_m_unseen_zero_weights_cannot_normalize():
    query = _one_hot(0)
    video = _video("v", [_exact_vec([0.4])])
    sources = [(0.0, _schema("s1", [_one_hot(1)]))]
    with pytest.raises(DataError, match="sum to zero"):
        m_unseen(query, sources, video, 0.6, normalize_g=True)


# ---------------------------------------------------------------------------
# pool ranking


def _kitchen():
    """A tiny hand-built retrieval world.

    "Cook Ham" is known with a two-step schema; "Cook Lamb" is the unseen
    query.  The ham video matches the edited schema but shares no tokens
    with the lamb query, so global matching cannot find it.
    """
    provider = SyntheticProvider(dim=4096)

    def embed(texts):
        return provider.embed_text(list(texts), space="joint")

    ham_steps = ["Put the ham in the oven.", "Wash the ham with water."]
    schema = Schema.build(
        task_id="t_ham",
        scored_steps=[
            (
                StepSentence(step_id=f"s_ham_{i}", text=text, embedding=vec),
                1.0 - 0.1 * i,
            )
            for i, (text, vec) in enumerate(zip(ham_steps, embed(ham_steps)))
        ],
    )
    library = SchemaLibrary(
        schemas={"t_ham": schema}, meta={"tasks": {"t_ham": "Cook Ham"}}
    )
    registry = TaskRegistry(
        [
            TaskRecord(task_id="t_ham", name="Cook Ham", partition="known"),
            TaskRecord(task_id="t_lamb", name="Cook Lamb"),
        ]
    )
    pool = VideoCorpus(
        [
            _video("v_ham", list(embed(ham_steps))),
            _video(
                "v_bike",
                list(embed(["Fix the bike chain.", "Oil the chain with degreaser."])),
            ),
        ]
    )
    return provider, registry, library, pool


def test_rank_pool_single_video_every_mode():
    provider, registry, library, _ = _kitchen()
    pool = VideoCorpus([_video("v_ham", [provider.embed_text(["Put the ham in."])[0]])])
    known = registry["t_ham"]
    unknown = registry["t_lamb"]
    for query, mode in ((known, "global"), (known, "step_agg"), (unknown, "ier")):
        ranked = rank_pool(
            query, pool, mode, provider=provider, library=library, registry=registry
        )
        assert ranked.video_ids() == ["v_ham"]
        assert ranked.mode == mode


def test_rank_pool_ties_break_lexicographically():
    provider, registry, library, _ = _kitchen()
    vec = provider.embed_text(["Fix the bike chain."])[0]
    pool = VideoCorpus([_video("v_b", [vec]), _video("v_a", [vec.copy()])])
    ranked = rank_pool(registry["t_lamb"], pool, "global", provider=provider)
    assert ranked.video_ids() == ["v_a", "v_b"]
    assert ranked.entries[0][1] == ranked.entries[1][1]


def test_rank_pool_edited_schema_finds_what_global_misses():
    provider, registry, library, pool = _kitchen()
    query = registry["t_lamb"]
    ranked_global = rank_pool(query, pool, "global", provider=provider)
    ranked_ier = rank_pool(
        query, pool, "ier", provider=provider, library=library, registry=registry
    )
    # no token overlap anywhere: global ties at zero and falls to the tie rule
    assert ranked_global.video_ids() == ["v_bike", "v_ham"]
    assert ranked_ier.video_ids() == ["v_ham", "v_bike"]
    assert ranked_ier.entries[0][1] > ranked_ier.entries[1][1]


def test_rank_pool_records_components_and_alignments():
    provider, registry, library, pool = _kitchen()
    ranked = rank_pool(
        registry["t_ham"], pool, "step_agg", provider=provider, library=library
    )
    for video_id, _ in ranked.entries:
        components = ranked.component_scores[video_id]
        assert set(components) == {"m_task", "m_step"}
        assert set(components["m_step"]) == {"t_ham"}
    assert set(ranked.alignments) == {"v_ham", "v_bike"}
    for alignment in ranked.alignments.values():
        assert len(alignment) == 2
        assert set(alignment[0]) == {"step", "clip_id", "f"}

    bare = rank_pool(
        registry["t_ham"],
        pool,
        "step_agg",
        params=RetrievalParams(explain_top_k=0),
        provider=provider,
        library=library,
    )
    assert bare.alignments == {}

    ranked_global = rank_pool(registry["t_ham"], pool, "global", provider=provider)
    assert ranked_global.alignments == {}
    assert all(
        set(c) == {"m_task"} for c in ranked_global.component_scores.values()
    )


def test_rank_pool_mode_preconditions():
    provider, registry, library, pool = _kitchen()
    with pytest.raises(DataError, match="unknown retrieval mode"):
        rank_pool(registry["t_ham"], pool, "hybrid", provider=provider)
    with pytest.raises(DataError, match="requires a provider"):
        rank_pool(registry["t_ham"], pool, "global")
    with pytest.raises(DataError, match="needs an induced schema"):
        rank_pool(
            registry["t_lamb"], pool, "step_agg", provider=provider, library=library
        )
    with pytest.raises(DataError, match="needs a schema library"):
        rank_pool(registry["t_lamb"], pool, "ier", provider=provider)


def test_rank_pool_distractors_do_not_reorder():
    provider, registry, library, pool = _kitchen()
    distractors = [
        _video(
            f"z_dist_{i}",
            [provider.embed_text([f"Unrelated filler sentence number {i}."])[0]],
        )
        for i in range(3)
    ]
    bigger = VideoCorpus(list(pool) + distractors)
    for mode, query in (("global", registry["t_ham"]), ("ier", registry["t_lamb"])):
        before = rank_pool(
            query, pool, mode, provider=provider, library=library, registry=registry
        ).video_ids()
        after = rank_pool(
            query, bigger, mode, provider=provider, library=library, registry=registry
        ).video_ids()
        assert [v for v in after if not v.startswith("z_dist_")] == before


def test_rank_pool_worker_count_is_invisible():
    provider, registry, library, pool = _kitchen()
    runs = [
        rank_pool(
            registry["t_lamb"],
            pool,
            "ier",
            provider=provider,
            library=library,
            registry=registry,
            workers=workers,
        ).to_json_dict()
        for workers in (1, 8, 1)
    ]
    assert json.dumps(runs[0], sort_keys=True) == json.dumps(runs[1], sort_keys=True)
    assert json.dumps(runs[0], sort_keys=True) == json.dumps(runs[2], sort_keys=True)


@pytest.mark.parametrize("scale,shift", [(2.0, 0.0), (0.5, 1.0), (3.0, -0.25)])
def test_rank_pool_order_invariant_under_affine_match_transform(scale, shift):
    provider, registry, library, pool = _kitchen()
    query = registry["t_ham"]
    query_vec = provider.embed_text([query.name])[0]
    ranked = rank_pool(query, pool, "global", provider=provider)

    def transformed_score(video):
        values = [scale * cosine(c.embedding, query_vec) + shift for c in video.clips]
        return sum(values) / len(values)

    oracle = sorted(pool, key=lambda v: (-transformed_score(v), v.video_id))
    assert ranked.video_ids() == [v.video_id for v in oracle]


def test_prepare_edit_sources_drops_emptied_schemas(caplog):
    provider, registry, library, pool = _kitchen()
    # every schema step answers only the source question; a high beta with
    # object replacement off deletes them all, so the source is dropped
    bike = TaskRecord(task_id="t_bike", name="Fix Bike")
    edit_params = EditParams(enable_object_replace=False, beta=0.99)
    with caplog.at_level(logging.WARNING, logger="schemaforge.retrieval"):
        sources = prepare_edit_sources(
            bike,
            library,
            provider,
            RetrievalParams(),
            registry=registry,
            edit_params=edit_params,
        )
        assert sources == []
        ranked = rank_pool(
            bike,
            pool,
            "ier",
            provider=provider,
            library=library,
            registry=registry,
            edit_params=edit_params,
        )
    assert "dropping edit source" in caplog.text
    assert "no usable edit sources" in caplog.text
    assert ranked.entries == rank_pool(bike, pool, "global", provider=provider).entries


def test_ranked_list_validation():
    with pytest.raises(DataError, match="non-empty"):
        RankedList(query_task_id="t", mode="global", entries=())
    with pytest.raises(DataError, match="repeats"):
        RankedList(
            query_task_id="t", mode="global", entries=(("v", 1.0), ("v", 0.5))
        )
    with pytest.raises(DataError, match="not sorted"):
        RankedList(
            query_task_id="t", mode="global", entries=(("a", 0.5), ("b", 1.0))
        )
    with pytest.raises(DataError, match="not sorted"):
        RankedList(
            query_task_id="t", mode="global", entries=(("b", 1.0), ("a", 1.0))
        )


def test_ranked_list_json_shape():
    ranked = RankedList(
        query_task_id="t_lamb",
        mode="ier",
        entries=(("v_a", 0.9), ("v_b", 0.1)),
        component_scores={"v_a": {"m_task": 0.5}, "v_b": {"m_task": 0.1}},
        alignments={"v_a": [{"step": "Do it.", "clip_id": "c_v_a_00", "f": 0.9}]},
    )
    payload = ranked.to_json_dict()
    assert payload["query"] == "t_lamb"
    assert payload["mode"] == "ier"
    assert [row["video_id"] for row in payload["results"]] == ["v_a", "v_b"]
    assert payload["results"][0]["alignment"][0]["clip_id"] == "c_v_a_00"
    assert "alignment" not in payload["results"][1]


def test_planted_world_edited_schemas_beat_global(
    bench_world, bench_library, retrieval_params
):
    unknown = [
        task for task in bench_world.registry if task.partition == "unknown"
    ]
    assert unknown

    def mrr(mode):
        total = 0.0
        for task in unknown:
            relevant = bench_world.manifest.relevant_for(task.task_id)
            ranked = rank_pool(
                task,
                bench_world.videos,
                mode,
                params=retrieval_params,
                provider=bench_world.provider,
                library=bench_library,
                registry=bench_world.registry,
            )
            ids = ranked.video_ids()
            first = min(ids.index(v) for v in relevant if v in ids) + 1
            total += 1.0 / first
        return total / len(unknown)

    assert mrr("ier") > mrr("global")
