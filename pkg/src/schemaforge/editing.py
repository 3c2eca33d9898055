"""Schema editing: adapt a source task's schema to a new target task.

Three routines run in sequence over every step: replace the source task's
main object with the target's, delete steps that answer the source question
better than the target question, and rewrite remaining out-of-place nouns
with masked-language-model suggestions.  Every decision lands in an
:class:`EditTrace` whose replay reproduces the edited schema exactly.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .corpus import Provenance, Schema, StepSentence, TaskRecord
from .errors import DataError
from .scoring import (
    CAP_JOINT_EMBED,
    NOUN_TAGS,
    ScorerProvider,
    masked_fill,
    pos_tag,
    qa_score,
)

logger = logging.getLogger(__name__)

_SURFACE_PUNCT = "\"'.,!?;:()[]"


@dataclass(frozen=True)
class EditParams:
    """Knobs for schema editing; the three enable flags drive ablations."""

    beta: float = 0.8
    question_template: str = "How to {task}?"
    max_mlm_candidates: int = 20
    enable_object_replace: bool = True
    enable_step_deletion: bool = True
    enable_token_replace: bool = True
    reembed: bool = True

    def __post_init__(self) -> None:
        # beta = 0 is the documented "deletion disabled" sentinel
        if not 0 <= self.beta <= 1:
            raise DataError(f"beta must be in (0, 1] or the 0 sentinel, got {self.beta}")
        if self.max_mlm_candidates <= 0:
            raise DataError("max_mlm_candidates must be positive")
        if "{task}" not in self.question_template:
            raise DataError("question template must contain {task}")

    def as_dict(self) -> dict:
        return {
            "beta": self.beta,
            "question_template": self.question_template,
            "max_mlm_candidates": self.max_mlm_candidates,
            "enable_object_replace": self.enable_object_replace,
            "enable_step_deletion": self.enable_step_deletion,
            "enable_token_replace": self.enable_token_replace,
        }


@dataclass
class EditTrace:
    """Audit log of one schema edit; replayable without any provider."""

    source_task_id: str
    target_task_id: str
    params: dict
    steps: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "source_task_id": self.source_task_id,
            "target_task_id": self.target_task_id,
            "params": self.params,
            "steps": self.steps,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EditTrace":
        return cls(
            source_task_id=obj["source_task_id"],
            target_task_id=obj["target_task_id"],
            params=dict(obj["params"]),
            steps=[dict(s) for s in obj["steps"]],
        )

    def replay(self, source_schema: Schema) -> Schema:
        """Re-apply the recorded operations to the source schema."""
        if len(self.steps) != len(source_schema.entries):
            raise DataError(
                f"trace covers {len(self.steps)} steps but schema has "
                f"{len(source_schema.entries)}"
            )
        survivors = []
        for (step, score), record in zip(source_schema.entries, self.steps):
            text = step.text
            kept = True
            for op in record["operations"]:
                kind = op["op"]
                if kind == "object_replace":
                    if op["before"] != text:
                        raise DataError(
                            f"trace mismatch on {step.step_id!r}: "
                            f"expected {op['before']!r}, got {text!r}"
                        )
                    text = op["after"]
                elif kind == "deletion_check":
                    kept = bool(op["kept"])
                elif kind == "token_swap":
                    words = text.split()
                    idx = op["word_index"]
                    if words[idx] != op["before"]:
                        raise DataError(
                            f"trace mismatch on {step.step_id!r} word {idx}: "
                            f"expected {op['before']!r}, got {words[idx]!r}"
                        )
                    words[idx] = op["after"]
                    text = " ".join(words)
                elif kind == "token_freeze":
                    pass
                else:
                    raise DataError(f"unknown trace operation {kind!r}")
            if kept:
                survivors.append(
                    (StepSentence(step_id=step.step_id, text=text), score)
                )
        if not survivors:
            raise DataError("trace replay produced an empty schema")
        return Schema.build(
            task_id=self.target_task_id,
            scored_steps=survivors,
            provenance=Provenance.edited(self.source_task_id, self.params),
        )


def extract_main_object(task_name: str, provider: ScorerProvider) -> str:
    """Lowercased first noun of the task name; last word if nothing tags as
    a noun."""
    if not task_name.strip():
        raise DataError("cannot extract the main object of an empty task name")
    pairs = pos_tag(provider, task_name)
    for surface, tag in pairs:
        if tag in NOUN_TAGS:
            return surface.strip(_SURFACE_PUNCT).lower()
    return pairs[-1][0].strip(_SURFACE_PUNCT).lower()


def _object_pattern(source_object: str) -> re.Pattern:
    return re.compile(
        r"\b(" + re.escape(source_object) + r")(es|s)?\b", re.IGNORECASE
    )


def replace_object_in_text(
    text: str, source_object: str, target_object: str
) -> tuple[str, list[int]]:
    """Replace whole-word occurrences of the source object, preserving any
    s/es plural suffix and initial capitalization.  Returns the new text and
    the character offsets of the matches."""
    if not source_object or not target_object:
        raise DataError("object replacement needs non-empty objects")
    positions: list[int] = []

    def sub(m: re.Match) -> str:
        positions.append(m.start())
        out = target_object
        if m.group(1)[:1].isupper():
            out = out[:1].upper() + out[1:]
        return out + (m.group(2) or "")

    return _object_pattern(source_object).sub(sub, text), positions


def object_replace(schema: Schema, source_object: str, target_object: str) -> Schema:
    """Apply the object swap to every step; scores and order unchanged.

    Steps whose texts collide after the swap are merged, keeping the
    best-scored occurrence.
    """
    edited = [
        (
            StepSentence(
                step_id=step.step_id,
                text=replace_object_in_text(step.text, source_object, target_object)[0],
            ),
            score,
        )
        for step, score in schema.entries
    ]
    return Schema.build(
        task_id=schema.task_id, scored_steps=edited, provenance=schema.provenance
    )


def deletion_decision(
    step_text: str,
    source_question: str,
    target_question: str,
    beta: float,
    provider: ScorerProvider,
) -> tuple[bool, float, float]:
    """Keep the step iff it answers the target question at least beta times
    as well as the source question.  Returns (kept, x_target, x_source)."""
    x_source = qa_score(provider, source_question, step_text)
    x_target = qa_score(provider, target_question, step_text)
    return x_target >= beta * x_source, x_target, x_source


def step_deletion(
    schema: Schema,
    source_task: TaskRecord,
    target_task: TaskRecord,
    beta: float,
    provider: ScorerProvider,
    question_template: str = "How to {task}?",
) -> Schema:
    """Drop steps specific to the source task; beta = 0 disables deletion."""
    if beta == 0:
        return schema
    source_q = question_template.format(task=source_task.name)
    target_q = question_template.format(task=target_task.name)
    kept = [
        (step, score)
        for step, score in schema.entries
        if deletion_decision(step.text, source_q, target_q, beta, provider)[0]
    ]
    if not kept:
        raise DataError(
            f"empty edited schema: deletion with beta={beta} removed every "
            f"step of {schema.task_id!r}"
        )
    return Schema.build(
        task_id=schema.task_id, scored_steps=kept, provenance=schema.provenance
    )


def _core(surface: str) -> str:
    return surface.strip(_SURFACE_PUNCT).lower()


def _swap_core(surface: str, replacement: str) -> str:
    """Replace the word inside ``surface`` keeping its punctuation shell and
    initial capitalization."""
    start = 0
    end = len(surface)
    while start < end and surface[start] in _SURFACE_PUNCT:
        start += 1
    while end > start and surface[end - 1] in _SURFACE_PUNCT:
        end -= 1
    core = surface[start:end]
    if core[:1].isupper():
        replacement = replacement[:1].upper() + replacement[1:]
    return surface[:start] + replacement + surface[end:]


def token_replace(
    step_text: str,
    target_task_name: str,
    provider: ScorerProvider,
    params: EditParams | None = None,
    immune_words: frozenset[str] = frozenset(),
    tagged: list[tuple[str, str]] | None = None,
) -> tuple[str, list[dict]]:
    """Rewrite the step's least-likely nouns with masked-LM suggestions.

    The edit budget is the noun count at entry (immune words excluded);
    each position is edited at most once, least-likely first, re-scoring
    the remaining positions after every change.  A step without nouns makes
    no provider calls.  Pass ``tagged`` to supply the POS tagging; otherwise
    the provider tags the step first.  Returns the new text and the trace
    operations.
    """
    params = params or EditParams()
    if tagged is None:
        tagged = pos_tag(provider, step_text)
    elif len(tagged) != len(step_text.split()):
        raise DataError("tagging does not cover the step's words")
    remaining = [
        i
        for i, (surface, tag) in enumerate(tagged)
        if tag in NOUN_TAGS and _core(surface) not in immune_words
    ]
    words = step_text.split()
    prefix_len = len(params.question_template.format(task=target_task_name).split())
    operations: list[dict] = []
    while remaining:
        prompt = params.question_template.format(task=target_task_name) + " " + " ".join(words)
        scored = [
            (
                masked_fill(
                    provider, prompt, prefix_len + i, top_k=params.max_mlm_candidates
                ),
                i,
            )
            for i in remaining
        ]
        fill, position = min(scored, key=lambda e: (e[0].original_log_prob, e[1]))
        remaining.remove(position)
        original = _core(words[position])
        candidate = _pick_noun_candidate(
            fill, words, position, original, provider
        )
        if candidate is None or candidate[0] == original:
            operations.append(
                {
                    "op": "token_freeze",
                    "word_index": position,
                    "word": words[position],
                    "log_prob": fill.original_log_prob,
                }
            )
            continue
        replacement, candidate_lp = candidate
        before = words[position]
        words[position] = _swap_core(before, replacement)
        operations.append(
            {
                "op": "token_swap",
                "word_index": position,
                "before": before,
                "after": words[position],
                "log_prob": fill.original_log_prob,
                "candidate_log_prob": candidate_lp,
            }
        )
    return " ".join(words), operations


def _pick_noun_candidate(
    fill,
    words: list[str],
    position: int,
    original: str,
    provider: ScorerProvider,
) -> tuple[str, float] | None:
    """Highest-probability single-word candidate that tags as a noun when
    placed in the step context.  The original word always qualifies."""
    for word, log_prob in fill.candidates:
        word = word.strip()
        if not word or " " in word:
            continue
        if word == original:
            return word, log_prob
        trial = list(words)
        trial[position] = _swap_core(words[position], word)
        tag = pos_tag(provider, " ".join(trial))[position][1]
        if tag in NOUN_TAGS:
            return word, log_prob
    return None


def edit_schema(
    source_schema: Schema,
    source_task: TaskRecord,
    target_task: TaskRecord,
    params: EditParams | None = None,
    provider: ScorerProvider | None = None,
) -> tuple[Schema, EditTrace]:
    """Run the full pipeline: object replacement, step deletion, token
    replacement.  Entry scores carry over from the source schema."""
    if provider is None:
        raise DataError("edit_schema requires a provider")
    params = params or EditParams()
    trace = EditTrace(
        source_task_id=source_task.task_id,
        target_task_id=target_task.task_id,
        params=params.as_dict(),
    )

    immune: frozenset[str] = frozenset()
    source_object = target_object = None
    if params.enable_object_replace or params.enable_token_replace:
        source_object = extract_main_object(source_task.name, provider)
        target_object = extract_main_object(target_task.name, provider)
    if target_object is not None:
        immune = frozenset({target_object, target_object + "s", target_object + "es"})

    source_q = params.question_template.format(task=source_task.name)
    target_q = params.question_template.format(task=target_task.name)

    survivors: list[tuple[StepSentence, float]] = []
    for step, score in source_schema.entries:
        record: dict = {"step_id": step.step_id, "source_text": step.text, "operations": []}
        text = step.text
        if params.enable_object_replace:
            replaced, positions = replace_object_in_text(text, source_object, target_object)
            record["operations"].append(
                {
                    "op": "object_replace",
                    "source_object": source_object,
                    "target_object": target_object,
                    "before": text,
                    "after": replaced,
                    "positions": positions,
                }
            )
            text = replaced
        kept = True
        if params.enable_step_deletion and params.beta > 0:
            kept, x_target, x_source = deletion_decision(
                text, source_q, target_q, params.beta, provider
            )
            record["operations"].append(
                {
                    "op": "deletion_check",
                    "x_target": x_target,
                    "x_source": x_source,
                    "beta": params.beta,
                    "kept": kept,
                }
            )
        if kept and params.enable_token_replace:
            text, ops = token_replace(
                text, target_task.name, provider, params, immune_words=immune
            )
            record["operations"].extend(ops)
        record["final_text"] = text if kept else None
        trace.steps.append(record)
        if kept:
            survivors.append((StepSentence(step_id=step.step_id, text=text), score))

    if not survivors:
        raise DataError(
            f"empty edited schema: editing {source_task.task_id!r} -> "
            f"{target_task.task_id!r} with beta={params.beta} removed every step"
        )

    embeddings = None
    if params.reembed and CAP_JOINT_EMBED in provider.capabilities:
        embeddings = provider.embed_text([s.text for s, _ in survivors], space="joint")
    entries = []
    for i, (step, score) in enumerate(survivors):
        entries.append(
            (
                StepSentence(
                    step_id=step.step_id,
                    text=step.text,
                    embedding=None if embeddings is None else embeddings[i],
                ),
                score,
            )
        )
    edited = Schema.build(
        task_id=target_task.task_id,
        scored_steps=entries,
        provenance=Provenance.edited(source_task.task_id, params.as_dict()),
    )
    return edited, trace
