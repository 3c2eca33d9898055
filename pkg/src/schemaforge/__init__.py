"""Schema induction, editing, and schema-guided video retrieval."""

from __future__ import annotations

__version__ = "0.1.0"

from .corpus import (
    ClipRecord,
    Provenance,
    Schema,
    SchemaLibrary,
    StepCorpus,
    StepSentence,
    TaskRecord,
    TaskRegistry,
    VideoCorpus,
    VideoRecord,
    load_schema_library,
    load_step_corpus,
    load_task_registry,
    load_video_corpus,
    save_schema_library,
    save_step_corpus,
    save_task_registry,
    save_video_corpus,
)
from .editing import EditParams, EditTrace, edit_schema, extract_main_object
from .errors import DataError, ProviderError, SchemaforgeError, UsageError
from .evalharness import DatasetManifest, EvalReport, compute_metrics, run_experiment
from .induction import InductionParams, induce_library, induce_schema
from .retrieval import RankedList, RetrievalParams, rank_pool
from .scoring import (
    FileBackedProvider,
    ScorerProvider,
    SidecarProvider,
    SyntheticProvider,
    cosine,
    match_score,
)
from .segmentation import SegmentationResult, segment_corpus, segment_video
from .similarity import SimilarityScore, TaskImageRegistry, top_r_sources
from .synthworld import World, WorldSpec, generate, oracle_rank, save_world

__all__ = [
    "ClipRecord",
    "DataError",
    "DatasetManifest",
    "EditParams",
    "EditTrace",
    "EvalReport",
    "FileBackedProvider",
    "InductionParams",
    "Provenance",
    "ProviderError",
    "RankedList",
    "RetrievalParams",
    "Schema",
    "SchemaLibrary",
    "SchemaforgeError",
    "ScorerProvider",
    "SegmentationResult",
    "SidecarProvider",
    "SimilarityScore",
    "StepCorpus",
    "StepSentence",
    "SyntheticProvider",
    "TaskImageRegistry",
    "TaskRecord",
    "TaskRegistry",
    "UsageError",
    "VideoCorpus",
    "VideoRecord",
    "World",
    "WorldSpec",
    "compute_metrics",
    "cosine",
    "edit_schema",
    "extract_main_object",
    "generate",
    "induce_library",
    "induce_schema",
    "load_schema_library",
    "load_step_corpus",
    "load_task_registry",
    "load_video_corpus",
    "match_score",
    "oracle_rank",
    "rank_pool",
    "run_experiment",
    "save_schema_library",
    "save_step_corpus",
    "save_task_registry",
    "save_video_corpus",
    "save_world",
    "segment_corpus",
    "segment_video",
    "top_r_sources",
    "__version__",
]
