"""Adapt a known task's schema to an unseen task and inspect the edit trace.

Each unseen task in the sample world is a noun swap of some known task, so
the correct adaptation is: replace the task object everywhere, drop steps
that stopped making sense, and swap leftover source-specific words.  The
trace records every decision and can replay the edit for auditing.
"""

from __future__ import annotations

import json
from pathlib import Path

from schemaforge.corpus import load_step_corpus, load_task_registry, load_video_corpus
from schemaforge.editing import EditParams, edit_schema
from schemaforge.induction import InductionParams, induce_library
from schemaforge.synthworld import load_world_provider

WORLD = Path(__file__).resolve().parent / "sample_world"


def _describe(op: dict) -> str:
    kind = op["op"]
    if kind == "object_replace":
        return f"{op['source_object']!r} -> {op['target_object']!r} at {op['positions']}"
    if kind == "deletion_check":
        return (
            f"x_target={op['x_target']:.4f} x_source={op['x_source']:.4f} "
            f"beta={op['beta']} kept={op['kept']}"
        )
    if kind == "token_swap":
        return f"{op['before']!r} -> {op['after']!r} at word {op['word_index']}"
    if kind == "token_freeze":
        return f"{op['word']!r} at word {op['word_index']} (no better candidate)"
    return json.dumps(op)


def main() -> None:
    registry = load_task_registry(WORLD / "tasks.jsonl")
    videos = load_video_corpus(WORLD / "videos.jsonl")
    steps = load_step_corpus(WORLD / "steps.jsonl")
    provider = load_world_provider(WORLD / "world_meta.json")
    meta = json.loads((WORLD / "world_meta.json").read_text(encoding="utf-8"))

    library = induce_library(
        registry, videos, steps, InductionParams(per_task_top_m=4, min_videos=1)
    )

    target_id, source_id = sorted(meta["pairs"].items())[0]
    source, target = registry[source_id], registry[target_id]
    print(f"editing {source.name!r} ({source_id}) -> {target.name!r} ({target_id})\n")

    schema = library.schemas[source_id]
    edited, trace = edit_schema(
        schema, source, target, params=EditParams(beta=0.8), provider=provider
    )

    print("source schema:")
    for step, _ in schema.entries:
        print(f"  {step.text}")
    print("\nedited schema:")
    for step, _ in edited.entries:
        truth_hit = step.text in meta["truth"][target_id]
        print(f"  {'=' if truth_hit else '?'} {step.text}")
    print("    (= marks steps matching the target task's planted truth)")

    print("\ntrace operations:")
    for record in trace.steps:
        kept = record["final_text"] is not None
        print(f"  {record['step_id']} ({'kept' if kept else 'deleted'})")
        for op in record["operations"]:
            print(f"    {op['op']:15s} {_describe(op)}")

    replayed = trace.replay(schema)
    print(f"\nreplay reproduces the edited schema: {replayed == edited}")


if __name__ == "__main__":
    main()
