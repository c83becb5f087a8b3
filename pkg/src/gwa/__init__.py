"""Gradient-weight alignment engine.

Computes per-sample alignment between classifier-head gradients and head
weights from training telemetry, tracks the alignment distribution online,
selects stopping points without a validation set, and attributes
performance to individual samples.
"""

from ._kernels import backend_name
from .alignment import (
    AlignmentScore,
    HeadSnapshot,
    SampleRecord,
    alignment,
    compute_alignment_batch,
    head_gradient,
    pairwise_alignment,
)
from .controller import (
    Criterion,
    PredictionChangeSeries,
    StopDecision,
    labelwave,
    select_finetune,
    select_live,
    select_scratch,
)
from .ingest import (
    IngestResult,
    ingest_path,
    ingest_stream,
    offline_recompute,
    offline_series,
    read_scores,
)
from .moments import (
    DEFAULT_BETA,
    EpochDistribution,
    GwaSeries,
    RunningMoments,
    accumulate,
    finalize_gwa,
    merge,
)
from .projection import ProjectionSpec, project_head, project_latents, project_record
from .trace import TraceHeader, TraceReader, TraceWriter, stable_softmax, weight_hash

__version__ = "0.1.0"

__all__ = [
    "AlignmentScore",
    "Criterion",
    "DEFAULT_BETA",
    "EpochDistribution",
    "GwaSeries",
    "HeadSnapshot",
    "IngestResult",
    "PredictionChangeSeries",
    "ProjectionSpec",
    "RunningMoments",
    "SampleRecord",
    "StopDecision",
    "TraceHeader",
    "TraceReader",
    "TraceWriter",
    "accumulate",
    "alignment",
    "backend_name",
    "compute_alignment_batch",
    "finalize_gwa",
    "head_gradient",
    "ingest_path",
    "ingest_stream",
    "labelwave",
    "merge",
    "offline_recompute",
    "offline_series",
    "pairwise_alignment",
    "project_head",
    "project_latents",
    "project_record",
    "read_scores",
    "select_finetune",
    "select_live",
    "select_scratch",
    "stable_softmax",
    "weight_hash",
]
