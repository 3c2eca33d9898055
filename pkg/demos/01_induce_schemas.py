"""Induce task schemas from the sample world and check them against the
planted ground truth.

The sample world plants a fixed set of step sentences per task, then builds
videos whose clips embed those sentences.  Induction walks the other way:
from clips back to the step sentences that explain them.  With zero clip
noise the recovered schemas should reproduce the planted steps exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

from schemaforge.corpus import load_step_corpus, load_task_registry, load_video_corpus
from schemaforge.induction import InductionParams, induce_library

WORLD = Path(__file__).resolve().parent / "sample_world"


def main() -> None:
    registry = load_task_registry(WORLD / "tasks.jsonl")
    videos = load_video_corpus(WORLD / "videos.jsonl")
    steps = load_step_corpus(WORLD / "steps.jsonl")
    meta = json.loads((WORLD / "world_meta.json").read_text(encoding="utf-8"))

    params = InductionParams(per_task_top_m=4, min_videos=1)
    library = induce_library(registry, videos, steps, params)
    print(f"induced {len(library)} schemas from {len(videos)} videos\n")

    recovered = 0
    planted = 0
    for task_id in sorted(library.schemas):
        schema = library.schemas[task_id]
        truth = set(meta["truth"][task_id])
        hits = truth & set(schema.texts())
        recovered += len(hits)
        planted += len(truth)
        print(f"{task_id} ({registry[task_id].name}):")
        for step, score in schema.entries:
            marker = "planted" if step.text in truth else "spurious"
            print(f"  {score:.3f}  [{marker}]  {step.text}")
        print()
    print(f"recovery: {recovered}/{planted} planted steps")


if __name__ == "__main__":
    main()
