"""Score a grid of retrieval configs over the unseen-task queries.

Runs plain name matching, full edit-and-retrieve, and every editing
ablation over the sample world's unseen-task manifest, then prints the
metric table and the CSV the evaluation harness emits for downstream
plotting.  Disabling edit operations should only hurt.  One wrinkle worth
knowing: with object replacement off ("-replacement") the deletion check
throws out every step of every source schema, the ranker falls back to
name matching for those queries, and the row lands exactly on "global".
"""

from __future__ import annotations

import logging
from pathlib import Path

from schemaforge.corpus import load_step_corpus, load_task_registry, load_video_corpus
from schemaforge.evalharness import ABLATIONS, load_manifest, reports_to_csv, run_experiment
from schemaforge.induction import InductionParams, induce_library
from schemaforge.synthworld import load_world_provider

WORLD = Path(__file__).resolve().parent / "sample_world"


def main() -> None:
    logging.basicConfig(level=logging.ERROR)
    registry = load_task_registry(WORLD / "tasks.jsonl")
    videos = load_video_corpus(WORLD / "videos.jsonl")
    steps = load_step_corpus(WORLD / "steps.jsonl")
    provider = load_world_provider(WORLD / "world_meta.json")
    manifest = load_manifest(WORLD / "manifest.jsonl")

    library = induce_library(
        registry, videos, steps, InductionParams(per_task_top_m=4, min_videos=1)
    )

    grid = [{"mode": "global"}]
    grid += [{"mode": "ier", "ablation": name} for name in ABLATIONS]
    reports = run_experiment(
        manifest, grid, videos, registry, library, provider, workers=1
    )

    print(f"dataset {manifest.name}: {len(manifest.queries)} queries, "
          f"{len(videos)} videos\n")
    header = f"{'config':18s} {'P@1':>6s} {'R@5':>6s} {'MRR':>6s} {'mean r':>7s}"
    print(header)
    print("-" * len(header))
    for report in reports:
        m = report.metrics
        print(
            f"{report.config['name']:18s} {m['p_at_1']:6.3f} {m['r_at_5']:6.3f} "
            f"{m['mrr']:6.3f} {m['mean_rank']:7.2f}"
        )

    print("\ncsv:")
    print(reports_to_csv(reports), end="")


if __name__ == "__main__":
    main()
