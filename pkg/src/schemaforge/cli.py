"""Command-line entry point: synth, preprocess, induce, edit, retrieve, eval.

Configuration resolves as flags > config file > built-in defaults, with
``SCHEMAFORGE_SIDECAR_URL`` slotting between flags and file for the sidecar
address.  The resolved config (minus execution-only knobs like the worker
count) is echoed into every output artifact.  Exit codes: 0 success, 1 usage
error, 2 data error, 3 provider failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

from . import __version__
from .corpus import (
    SchemaLibrary,
    TaskRecord,
    load_schema_library,
    load_step_corpus,
    load_task_registry,
    load_video_corpus,
    save_schema_library,
    save_video_corpus,
)
from .editing import EditParams, edit_schema
from .errors import DataError, ProviderError, SchemaforgeError, UsageError
from .evalharness import load_manifest, reports_to_csv, run_experiment
from .induction import InductionParams, induce_library
from .retrieval import RetrievalParams, rank_pool
from .scoring import FileBackedProvider, ScorerProvider, SidecarProvider, SyntheticProvider
from .segmentation import segment_corpus
from .similarity import load_task_images
from .synthworld import WorldSpec, generate, save_world

logger = logging.getLogger(__name__)

SIDECAR_URL_ENV = "SCHEMAFORGE_SIDECAR_URL"

DEFAULTS: dict[str, object] = {
    "beta": 0.8,
    "lambda": 0.6,
    "r": 1,
    "top_n": 30,
    "top_m": 100,
    "cluster_th": 0.10,
    "rank_cutoff": 150,
    "min_videos": 20,
    "seed": 0,
    "question_template": "How to {task}?",
    "explain_top_k": 5,
    "provider.dim": 256,
    "sidecar.url": "",
    "sidecar.max_inflight": 8,
    "scoring.normalize": True,
    "retrieval.normalize_g": False,
    "segmentation.k_min": 5,
    "segmentation.k_max": 10,
    "segmentation.metric": "euclidean",
}


class _Parser(argparse.ArgumentParser):
    """argparse reports usage problems with exit code 2; we reserve 2 for
    data errors, so route them through UsageError instead."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _coerce(key: str, raw: str) -> object:
    default = DEFAULTS[key]
    if isinstance(default, bool):
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise UsageError(f"config key {key!r} expects a boolean, got {raw!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        try:
            return int(raw)
        except ValueError as exc:
            raise UsageError(f"config key {key!r} expects an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise UsageError(f"config key {key!r} expects a number, got {raw!r}") from exc
    return raw.strip().strip("\"'")


def parse_config_file(path: str | Path) -> dict[str, object]:
    """Flat ``key = value`` lines; # starts a comment; keys must be known."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def resolve_config(args: argparse.Namespace) -> dict[str, object]:
    """Defaults, then config file, then the sidecar env var, then flags."""
    config = dict(DEFAULTS)
    if getattr(args, "config", None):
        config.update(parse_config_file(args.config))
    env_url = os.environ.get(SIDECAR_URL_ENV)
    if env_url:
        config["sidecar.url"] = env_url
    flag_map = {
        "beta": "beta",
        "lambda_": "lambda",
        "r": "r",
        "top_n": "top_n",
        "top_m": "top_m",
        "cluster_th": "cluster_th",
        "rank_cutoff": "rank_cutoff",
        "min_videos": "min_videos",
        "seed": "seed",
        "sidecar_url": "sidecar.url",
        "normalize_g": "retrieval.normalize_g",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            config[key] = value
    return config


def _build_provider(args: argparse.Namespace, config: dict) -> ScorerProvider:
    if config.get("sidecar.url"):
        return SidecarProvider(
            str(config["sidecar.url"]),
            cache_dir=getattr(args, "sidecar_cache", None),
            max_inflight=int(config["sidecar.max_inflight"]),
        )
    fixture = getattr(args, "provider_fixture", None)
    if fixture:
        return FileBackedProvider(fixture)
    world_meta = getattr(args, "world_meta", None)
    if world_meta:
        from .synthworld import load_world_provider

        return load_world_provider(world_meta)
    return SyntheticProvider(dim=int(config["provider.dim"]))


def _write_json(path: str | Path, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-") or "task"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker pool cap; results are identical for any value")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--world-meta", dest="world_meta",
                        help="world_meta.json of a generated world (synthetic provider)")
    parser.add_argument("--provider-fixture", dest="provider_fixture",
                        help="JSON fixture of recorded provider responses")
    parser.add_argument("--sidecar-url", dest="sidecar_url", default=None)
    parser.add_argument("--sidecar-cache", dest="sidecar_cache", default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="schemaforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"schemaforge {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", parents=[], help="generate a planted world")
    p.add_argument("--spec", required=True, help="world spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("preprocess", help="reduce each video to representative clips")
    p.add_argument("--videos", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("induce", help="build schemas for tasks with videos")
    p.add_argument("--tasks", required=True)
    p.add_argument("--videos", required=True)
    p.add_argument("--steps", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-n", dest="top_n", type=int, default=None)
    p.add_argument("--top-m", dest="top_m", type=int, default=None)
    p.add_argument("--cluster-th", dest="cluster_th", type=float, default=None)
    p.add_argument("--min-videos", dest="min_videos", type=int, default=None)
    p.add_argument("--rank-cutoff", dest="rank_cutoff", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("edit", help="adapt a source schema to a target task")
    p.add_argument("--library", required=True)
    p.add_argument("--source", required=True, help="source task name or id")
    p.add_argument("--target", required=True, help="target task name or id")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None)
    _add_common(p)

    p = sub.add_parser("retrieve", help="rank a video pool for a task query")
    p.add_argument("--query", required=True, help="query task name or id")
    p.add_argument("--pool", required=True)
    p.add_argument("--library", default=None)
    p.add_argument("--mode", choices=("global", "step_agg", "ier"), default="global")
    p.add_argument("--r", type=int, default=None)
    p.add_argument("--lambda", dest="lambda_", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--normalize-g", dest="normalize_g", action="store_const", const=True,
                   default=None)
    p.add_argument("--images", default=None, help="task_images.jsonl manifest")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("eval", help="run an experiment grid over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--library", default=None)
    p.add_argument("--grid", required=True, help="JSON list of grid configs")
    p.add_argument("--images", default=None)
    p.add_argument("--out", required=True, help="output directory for reports")
    _add_common(p)

    return parser


def _echo(config: dict) -> dict:
    return {k: config[k] for k in sorted(config)}


def _resolve_task(
    identifier: str, library: SchemaLibrary | None
) -> TaskRecord:
    """Map a task name or id onto a record, using the library's task table."""
    if library is not None:
        tasks = library.meta.get("tasks", {})
        if identifier in tasks:
            return TaskRecord(task_id=identifier, name=tasks[identifier])
        matches = [tid for tid, name in sorted(tasks.items()) if name == identifier]
        if matches:
            return TaskRecord(task_id=matches[0], name=identifier)
    return TaskRecord(task_id=_slug(identifier), name=identifier)


def _cmd_synth(args, config) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec_obj = json.load(fh)
    if args.seed is not None:
        spec_obj["seed"] = args.seed
    spec = WorldSpec.from_dict(spec_obj)
    world = generate(spec)
    paths = save_world(world, args.out)
    meta_path = paths["meta"]
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    meta["config"] = _echo(config)
    _write_json(meta_path, meta)
    logger.info("world written to %s", args.out)
    return 0


def _cmd_preprocess(args, config) -> int:
    videos = load_video_corpus(args.videos, rank_cutoff=int(config["rank_cutoff"]))
    seed = int(config["seed"])
    segmented = segment_corpus(
        videos,
        seed,
        k_min=int(config["segmentation.k_min"]),
        k_max=int(config["segmentation.k_max"]),
        metric=str(config["segmentation.metric"]),
    )
    save_video_corpus(segmented, args.out, inline=False)
    _write_json(Path(args.out).with_suffix(".config.json"), {"config": _echo(config)})
    logger.info("segmented %d videos into %s", len(segmented), args.out)
    return 0


def _cmd_induce(args, config) -> int:
    registry = load_task_registry(args.tasks)
    videos = load_video_corpus(args.videos, rank_cutoff=int(config["rank_cutoff"]))
    steps = load_step_corpus(args.steps)
    params = InductionParams(
        per_clip_top_n=int(config["top_n"]),
        per_task_top_m=int(config["top_m"]),
        cluster_distance_threshold=float(config["cluster_th"]),
        min_videos=int(config["min_videos"]),
        normalize=bool(config["scoring.normalize"]),
    )
    library = induce_library(
        registry, videos, steps, params, extra_meta={"config": _echo(config)}
    )
    save_schema_library(library, args.out)
    logger.info("induced %d schemas into %s", len(library), args.out)
    return 0


def _cmd_edit(args, config) -> int:
    library = load_schema_library(args.library)
    provider = _build_provider(args, config)
    source = _resolve_task(args.source, library)
    if source.task_id not in library.schemas:
        raise DataError(f"library has no schema for source task {args.source!r}")
    target = _resolve_task(args.target, library)
    params = EditParams(
        beta=float(config["beta"]),
        question_template=str(config["question_template"]),
    )
    edited, trace = edit_schema(
        library.schemas[source.task_id], source, target, params=params, provider=provider
    )
    out_meta = {
        "tasks": {source.task_id: source.name, target.task_id: target.name},
        "config": _echo(config),
    }
    save_schema_library(SchemaLibrary(schemas={target.task_id: edited}, meta=out_meta), args.out)
    if args.trace:
        _write_json(args.trace, {"config": _echo(config), "trace": trace.to_json_dict()})
    logger.info(
        "edited %s -> %s: %d of %d steps kept",
        source.task_id, target.task_id, len(edited), len(library.schemas[source.task_id]),
    )
    return 0


def _cmd_retrieve(args, config) -> int:
    pool = load_video_corpus(args.pool, rank_cutoff=None)
    provider = _build_provider(args, config)
    library = load_schema_library(args.library) if args.library else None
    if args.mode in ("step_agg", "ier") and library is None:
        raise UsageError(f"--mode {args.mode} requires --library")
    query = _resolve_task(args.query, library)
    images = load_task_images(args.images, provider) if args.images else None
    params = RetrievalParams(
        lambda_=float(config["lambda"]),
        r=int(config["r"]),
        normalize=bool(config["scoring.normalize"]),
        normalize_g=bool(config["retrieval.normalize_g"]),
        explain_top_k=int(config["explain_top_k"]),
    )
    edit_params = EditParams(
        beta=float(config["beta"]),
        question_template=str(config["question_template"]),
    )
    ranked = rank_pool(
        query, pool, args.mode,
        params=params, provider=provider, library=library,
        images=images, edit_params=edit_params, workers=args.workers,
    )
    payload = ranked.to_json_dict()
    payload["config"] = _echo(config)
    _write_json(args.out, payload)
    logger.info("ranked %d videos for %s into %s", len(pool), query.task_id, args.out)
    return 0


def _cmd_eval(args, config) -> int:
    manifest = load_manifest(args.manifest)
    pool = load_video_corpus(args.pool, rank_cutoff=None)
    registry = load_task_registry(args.tasks)
    library = load_schema_library(args.library) if args.library else None
    provider = _build_provider(args, config)
    images = load_task_images(args.images, provider) if args.images else None
    with open(args.grid, "r", encoding="utf-8") as fh:
        grid = json.load(fh)
    if not isinstance(grid, list) or not grid:
        raise DataError(f"{args.grid}: grid must be a non-empty JSON list")
    for entry in grid:
        entry.setdefault("lambda", config["lambda"])
        entry.setdefault("beta", config["beta"])
        entry.setdefault("seed", config["seed"])
    reports = run_experiment(
        manifest, grid, pool, registry, library, provider,
        images=images, workers=args.workers,
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for i, report in enumerate(reports):
        payload = report.to_json_dict()
        payload["config_echo"] = _echo(config)
        _write_json(outdir / f"report_{i:02d}_{_slug(report.config['name'])}.json", payload)
    (outdir / "summary.csv").write_text(reports_to_csv(reports), encoding="utf-8")
    logger.info("wrote %d reports to %s", len(reports), outdir)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
    "induce": _cmd_induce,
    "edit": _cmd_edit,
    "retrieve": _cmd_retrieve,
    "eval": _cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("SCHEMAFORGE_LOG", "INFO"),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        config = resolve_config(args)
        logger.info(
            "resolved config (seed=%s): %s", config["seed"], json.dumps(_echo(config))
        )
        return _COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"schemaforge: {exc}", file=sys.stderr)
        return 1
    except ProviderError as exc:
        print(f"schemaforge: provider error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"schemaforge: data error: {exc}", file=sys.stderr)
        return 2
    except SchemaforgeError as exc:
        print(f"schemaforge: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"schemaforge: data error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"schemaforge: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
