"""Retrieval metrics and the experiment grid.

Rank-based metrics (mean, median, reciprocal) use the first relevant
video's rank.  The median of an even count is the mean of the two middle
values.  Reports serialize as JSON and as flat CSV rows; companion helpers
emit grouped CSV for video-length and task-similarity breakdowns.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import SchemaLibrary, TaskRegistry, VideoCorpus
from .editing import EditParams
from .errors import DataError
from .retrieval import RankedList, RetrievalParams, rank_pool
from .scoring import ScorerProvider
from .similarity import TaskImageRegistry

logger = logging.getLogger(__name__)

DEFAULT_KS = (5, 10)

# editing-module toggles for the ablation grid
ABLATIONS: dict[str, dict] = {
    "full": {},
    "-mask": {"enable_token_replace": False},
    "-deletion": {"enable_step_deletion": False},
    "-replacement": {"enable_object_replace": False},
    "-all": {
        "enable_token_replace": False,
        "enable_step_deletion": False,
        "enable_object_replace": False,
    },
}

REPORT_CSV_FIELDS = [
    "dataset",
    "config",
    "mode",
    "lambda",
    "r",
    "beta",
    "ablation",
    "seed",
    "p_at_1",
    "r_at_5",
    "r_at_10",
    "mrr",
    "mean_rank",
    "med_rank",
]


@dataclass(frozen=True)
class DatasetManifest:
    """Evaluation queries with their relevant-video ground truth."""

    name: str
    pool: str
    queries: tuple[tuple[str, frozenset[str]], ...]

    def __post_init__(self) -> None:
        if not self.queries:
            raise DataError(f"manifest {self.name!r} has no queries")
        seen = set()
        for task_id, relevant in self.queries:
            if task_id in seen:
                raise DataError(f"manifest {self.name!r}: duplicate query {task_id!r}")
            seen.add(task_id)
            if not relevant:
                raise DataError(
                    f"manifest {self.name!r}: query {task_id!r} has an empty relevant set"
                )

    def relevant_for(self, task_id: str) -> frozenset[str]:
        for qid, relevant in self.queries:
            if qid == task_id:
                return relevant
        raise DataError(f"manifest {self.name!r} has no query {task_id!r}")

    def validate_against_pool(self, pool: VideoCorpus) -> None:
        for task_id, relevant in self.queries:
            for video_id in sorted(relevant):
                if video_id not in pool:
                    raise DataError(
                        f"manifest {self.name!r}: query {task_id!r} lists relevant "
                        f"video {video_id!r} which is not in the pool"
                    )


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a manifest file: a header line naming the pool, then one query
    object per line."""
    path = Path(path)
    lines = [l for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]
    if not lines:
        raise DataError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:1: malformed JSON ({exc.msg})") from exc
    if "pool" not in header:
        raise DataError(f"{path}:1: manifest header must name the pool file")
    queries = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
        if "task_id" not in obj or "relevant" not in obj:
            raise DataError(f"{path}:{lineno}: query needs task_id and relevant")
        queries.append((obj["task_id"], frozenset(obj["relevant"])))
    return DatasetManifest(
        name=header.get("name", path.stem), pool=header["pool"], queries=tuple(queries)
    )


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"name": manifest.name, "pool": manifest.pool}) + "\n")
        for task_id, relevant in manifest.queries:
            fh.write(
                json.dumps({"task_id": task_id, "relevant": sorted(relevant)}) + "\n"
            )


def first_relevant_rank(ranked: RankedList, relevant: frozenset[str] | set[str]) -> int:
    """1-based rank of the best-placed relevant video."""
    for position, (video_id, _score) in enumerate(ranked.entries, start=1):
        if video_id in relevant:
            return position
    raise DataError(
        f"none of the relevant videos {sorted(relevant)} appear in the ranked pool "
        f"for query {ranked.query_task_id!r}"
    )


@dataclass
class EvalReport:
    """Metric scalars plus per-query first ranks and the config that
    produced them."""

    dataset: str
    config: dict
    metrics: dict[str, float]
    first_ranks: dict[str, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "config": self.config,
            "metrics": self.metrics,
            "first_ranks": self.first_ranks,
        }

    def csv_row(self) -> dict:
        row = {
            "dataset": self.dataset,
            "config": self.config.get("name", ""),
            "mode": self.config.get("mode", ""),
            "lambda": self.config.get("lambda", ""),
            "r": self.config.get("r", ""),
            "beta": self.config.get("beta", ""),
            "ablation": self.config.get("ablation", ""),
            "seed": self.config.get("seed", ""),
        }
        for key in ("p_at_1", "r_at_5", "r_at_10", "mrr", "mean_rank", "med_rank"):
            row[key] = self.metrics.get(key, "")
        return row


def _median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2 == 1:
        return float(ordered[mid])
    return (ordered[mid - 1] + ordered[mid]) / 2


def compute_metrics(
    rankings: Sequence[RankedList],
    manifest: DatasetManifest,
    ks: Sequence[int] = DEFAULT_KS,
    config: Mapping | None = None,
) -> EvalReport:
    """Score one ranking per manifest query; rankings match queries by
    task id, so query order never matters."""
    if not rankings:
        raise DataError("no rankings to score")
    by_query = {r.query_task_id: r for r in rankings}
    missing = [qid for qid, _ in manifest.queries if qid not in by_query]
    if missing:
        raise DataError(f"no ranking supplied for queries {missing}")

    first_ranks: dict[str, int] = {}
    recall_sums = {k: 0.0 for k in ks}
    for task_id, relevant in manifest.queries:
        ranked = by_query[task_id]
        first_ranks[task_id] = first_relevant_rank(ranked, relevant)
        ids = ranked.video_ids()
        for k in ks:
            hits = sum(1 for vid in ids[:k] if vid in relevant)
            recall_sums[k] += hits / len(relevant)

    n = len(manifest.queries)
    ranks = [first_ranks[qid] for qid, _ in manifest.queries]
    metrics = {
        "p_at_1": sum(1 for r in ranks if r == 1) / n,
        "mrr": sum(1.0 / r for r in ranks) / n,
        "mean_rank": sum(ranks) / n,
        "med_rank": _median(ranks),
    }
    for k in ks:
        metrics[f"r_at_{k}"] = recall_sums[k] / n
    return EvalReport(
        dataset=manifest.name,
        config=dict(config or {}),
        metrics=metrics,
        first_ranks=first_ranks,
    )


def run_experiment(
    manifest: DatasetManifest,
    grid: Sequence[Mapping],
    pool: VideoCorpus,
    registry: TaskRegistry,
    library: SchemaLibrary | None,
    provider: ScorerProvider,
    images: TaskImageRegistry | None = None,
    ks: Sequence[int] = DEFAULT_KS,
    workers: int = 1,
) -> list[EvalReport]:
    """Evaluate every grid config over the manifest.

    A config is a mapping with ``mode`` plus optional ``name``, ``lambda``,
    ``r``, ``beta``, ``ablation`` (one of the ABLATIONS keys), ``seed``.
    """
    manifest.validate_against_pool(pool)
    reports = []
    for raw in grid:
        config = dict(raw)
        mode = config.get("mode")
        if mode not in ("global", "step_agg", "ier"):
            raise DataError(f"grid config has unknown mode {mode!r}")
        ablation = config.get("ablation", "full")
        if ablation not in ABLATIONS:
            raise DataError(
                f"unknown ablation {ablation!r}; expected one of {sorted(ABLATIONS)}"
            )
        params = RetrievalParams(
            lambda_=float(config.get("lambda", 0.6)),
            r=int(config.get("r", 1)),
            normalize=bool(config.get("normalize", True)),
            normalize_g=bool(config.get("normalize_g", False)),
        )
        edit_params = EditParams(
            beta=float(config.get("beta", 0.8)), **ABLATIONS[ablation]
        )
        config.setdefault("name", _config_name(mode, ablation, params))
        config.update(
            mode=mode, ablation=ablation, beta=edit_params.beta,
            **{"lambda": params.lambda_, "r": params.r},
        )
        rankings = []
        for task_id, _relevant in manifest.queries:
            query = registry[task_id]
            rankings.append(
                rank_pool(
                    query, pool, mode,
                    params=params, provider=provider, library=library,
                    registry=registry, images=images, edit_params=edit_params,
                    workers=workers,
                )
            )
        report = compute_metrics(rankings, manifest, ks=ks, config=config)
        logger.info(
            "config %s: %s", config["name"],
            ", ".join(f"{k}={v:.4f}" for k, v in sorted(report.metrics.items())),
        )
        reports.append(report)
    return reports


def _config_name(mode: str, ablation: str, params: RetrievalParams) -> str:
    name = mode
    if mode == "ier" and params.r > 1:
        name += str(params.r)
    if ablation != "full":
        name += f" {ablation}"
    return name


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=REPORT_CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for report in reports:
        writer.writerow(report.csv_row())
    return buffer.getvalue()


def query_video_length(manifest: DatasetManifest, pool: VideoCorpus, task_id: str) -> float:
    """Mean clip count over the query's relevant videos."""
    relevant = manifest.relevant_for(task_id)
    counts = [len(pool[vid].clips) for vid in sorted(relevant)]
    return sum(counts) / len(counts)


def breakdown_by_value(
    rankings_by_mode: Mapping[str, Sequence[RankedList]],
    manifest: DatasetManifest,
    value_by_query: Mapping[str, float],
    bins: Sequence[tuple[float, float]],
    value_name: str,
) -> list[dict]:
    """Group queries into [low, high] bins of some per-query value and report
    each mode's mean first-relevant rank per bin."""
    rows = []
    for low, high in bins:
        members = [
            qid for qid, _ in manifest.queries if low <= value_by_query[qid] <= high
        ]
        for mode in sorted(rankings_by_mode):
            by_query = {r.query_task_id: r for r in rankings_by_mode[mode]}
            ranks = [
                first_relevant_rank(by_query[qid], manifest.relevant_for(qid))
                for qid in members
            ]
            rows.append(
                {
                    f"{value_name}_low": low,
                    f"{value_name}_high": high,
                    "mode": mode,
                    "n_queries": len(members),
                    "mean_rank": sum(ranks) / len(ranks) if ranks else "",
                }
            )
    return rows


def length_breakdown(
    rankings_by_mode: Mapping[str, Sequence[RankedList]],
    manifest: DatasetManifest,
    pool: VideoCorpus,
    bins: Sequence[tuple[float, float]],
) -> list[dict]:
    """Mean rank per mode, grouped by relevant-video clip count."""
    values = {
        qid: query_video_length(manifest, pool, qid) for qid, _ in manifest.queries
    }
    return breakdown_by_value(rankings_by_mode, manifest, values, bins, "length")


def similarity_breakdown(
    rankings_by_mode: Mapping[str, Sequence[RankedList]],
    manifest: DatasetManifest,
    similarity_by_query: Mapping[str, float],
    bins: Sequence[tuple[float, float]],
) -> list[dict]:
    """Mean rank per mode, grouped by query-to-source task similarity."""
    return breakdown_by_value(
        rankings_by_mode, manifest, similarity_by_query, bins, "similarity"
    )


def rows_to_csv(rows: Sequence[Mapping]) -> str:
    if not rows:
        return ""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()
