"""Rank the video pool for an unseen task: name matching vs edited schemas.

Unseen tasks have no videos of their own in the induction corpus, so plain
name matching has to rely on surface similarity.  The edit-and-retrieve mode
instead adapts the closest known schemas to the query and aggregates clip
alignments against the edited steps, which is what lifts the right videos
to the top.
"""

from __future__ import annotations

import json
from pathlib import Path

from schemaforge.corpus import load_step_corpus, load_task_registry, load_video_corpus
from schemaforge.editing import EditParams
from schemaforge.evalharness import first_relevant_rank, load_manifest
from schemaforge.induction import InductionParams, induce_library
from schemaforge.retrieval import RetrievalParams, rank_pool
from schemaforge.synthworld import load_world_provider

WORLD = Path(__file__).resolve().parent / "sample_world"


def main() -> None:
    registry = load_task_registry(WORLD / "tasks.jsonl")
    videos = load_video_corpus(WORLD / "videos.jsonl")
    steps = load_step_corpus(WORLD / "steps.jsonl")
    provider = load_world_provider(WORLD / "world_meta.json")
    manifest = load_manifest(WORLD / "manifest.jsonl")
    meta = json.loads((WORLD / "world_meta.json").read_text(encoding="utf-8"))

    library = induce_library(
        registry, videos, steps, InductionParams(per_task_top_m=4, min_videos=1)
    )

    query_id = sorted(meta["pairs"])[0]
    query = registry[query_id]
    relevant = manifest.relevant_for(query_id)
    print(f"query: {query.name!r} ({query_id}), unseen; relevant = {sorted(relevant)}")
    print(f"pool: {len(videos)} videos\n")

    params = RetrievalParams(lambda_=0.6, r=1)
    rankings = {}
    for mode in ("global", "ier"):
        rankings[mode] = rank_pool(
            query,
            videos,
            mode,
            params=params,
            provider=provider,
            library=library,
            registry=registry,
            edit_params=EditParams(beta=0.8),
        )

    for mode, ranked in rankings.items():
        print(f"{mode} top 5:")
        for position, (video_id, score) in enumerate(ranked.entries[:5], start=1):
            marker = "*" if video_id in relevant else " "
            print(f"  {position}. {marker} {video_id:15s} {score:.4f}")
        rank = first_relevant_rank(ranked, relevant)
        print(f"  first relevant video at rank {rank}\n")

    top_id, _ = rankings["ier"].entries[0]
    alignment = rankings["ier"].alignments.get(top_id)
    if alignment:
        print(f"edited-step alignment for {top_id}:")
        for row in alignment:
            print(f"  {row['clip_id']:18s} f={row['f']:.4f}  {row['step']}")


if __name__ == "__main__":
    main()
