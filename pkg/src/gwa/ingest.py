"""Drive the alignment pipeline over a telemetry trace.

Online estimation: every sample in a step is aligned against that step's
(drifting) head snapshot and folded into the current epoch's distribution.
Offline estimation re-aligns a whole epoch against one fixed reference
snapshot, recomputing class probabilities through that head, which is what
quantifies the online estimator's drift bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import BinaryIO, Optional

import numpy as np

from .alignment import compute_alignment_batch
from .errors import DimensionMismatch, TraceMissing
from .moments import DEFAULT_BETA, EpochDistribution, GwaSeries, MIN_FINALIZE_COUNT
from .projection import ProjectionSpec, project_head, project_latents
from .trace import HeadSnapshot, StepRecord, TraceReader, stable_softmax

SCORE_DTYPE = np.dtype(
    [
        ("sample_id", "<u8"),
        ("epoch", "<u4"),
        ("step", "<u4"),
        ("gamma", "<f4"),
        ("grad_norm", "<f4"),
    ]
)


class ScoreWriter:
    """Appends per-sample alignment rows (gamma NaN when undefined)."""

    def __init__(self, sink: BinaryIO):
        self._sink = sink

    def write_batch(
        self,
        sample_ids: np.ndarray,
        epoch: int,
        step: int,
        gamma: np.ndarray,
        grad_norm: np.ndarray,
    ) -> None:
        rows = np.empty(len(sample_ids), dtype=SCORE_DTYPE)
        rows["sample_id"] = sample_ids
        rows["epoch"] = epoch
        rows["step"] = step
        rows["gamma"] = gamma.astype(np.float32)
        rows["grad_norm"] = grad_norm.astype(np.float32)
        self._sink.write(rows.tobytes())


def read_scores(path) -> np.ndarray:
    """Load a per-sample alignment file as a structured array."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError as exc:
        raise TraceMissing(f"per-sample alignment file not found: {path}") from exc
    if len(raw) % SCORE_DTYPE.itemsize:
        raise TraceMissing(
            f"{path}: size {len(raw)} is not a whole number of score rows"
        )
    return np.frombuffer(raw, dtype=SCORE_DTYPE)


@dataclass
class IngestResult:
    header: object
    series: GwaSeries
    # per-epoch fraction of samples whose argmax prediction changed; None
    # for the first epoch
    prediction_changes: list[Optional[float]] = field(default_factory=list)
    epochs_seen: list[int] = field(default_factory=list)


class _PredictionTracker:
    """Tracks per-sample argmax predictions across epochs."""

    def __init__(self) -> None:
        self._prev: Optional[dict[int, int]] = None
        self._curr: dict[int, int] = {}

    def observe(self, sample_ids: np.ndarray, probs: np.ndarray) -> None:
        preds = probs.argmax(axis=1)
        for sid, p in zip(sample_ids.tolist(), preds.tolist()):
            self._curr[sid] = p

    def roll_epoch(self) -> Optional[float]:
        """Close the epoch, returning the change fraction vs the previous one."""
        change: Optional[float] = None
        if self._prev is not None:
            common = self._curr.keys() & self._prev.keys()
            if common:
                changed = sum(self._curr[s] != self._prev[s] for s in common)
                change = changed / len(common)
        self._prev = self._curr
        self._curr = {}
        return change


def ingest_stream(
    source: BinaryIO,
    beta: float = DEFAULT_BETA,
    include_bias: bool = False,
    retain_scores: bool = False,
    score_sink: Optional[BinaryIO] = None,
    projection: Optional[ProjectionSpec] = None,
    min_count: int = MIN_FINALIZE_COUNT,
) -> IngestResult:
    """Parse a telemetry stream and build the per-epoch alignment series.

    Each step's samples are aligned against the weights in force at the
    start of that step. Epoch boundaries finalize the running distribution;
    with retain_scores the streaming moments are cross-checked against the
    store-then-compute path before the epoch is appended.
    """
    reader = TraceReader(source)
    header = reader.header
    if include_bias and not header.bias_present:
        raise DimensionMismatch("include_bias=True but trace has no bias sections")

    writer = ScoreWriter(score_sink) if score_sink is not None else None
    tracker = _PredictionTracker()
    series = GwaSeries(
        steps_per_epoch=header.steps_per_epoch,
        batch_size=header.batch_size,
        dataset_size=header.dataset_size,
    )
    result = IngestResult(header=header, series=series)

    projected: dict[int, HeadSnapshot] = {}
    current: Optional[EpochDistribution] = None

    def close_epoch() -> None:
        if current is None:
            return
        current.check_consistency()
        current.summarize(min_count=min_count)
        series.append(current)
        result.epochs_seen.append(current.epoch)
        result.prediction_changes.append(tracker.roll_epoch())

    for rec in reader:
        if current is None or rec.epoch != current.epoch:
            close_epoch()
            current = EpochDistribution(
                epoch=rec.epoch, beta=beta, retain_scores=retain_scores
            )

        probs = rec.probs
        if header.probs_are_logits:
            probs = stable_softmax(probs).astype(np.float32)

        snapshot = rec.snapshot
        latents = rec.latents
        if projection is not None:
            latents = project_latents(projection, latents)
            cached = projected.get(snapshot.weight_hash)
            if cached is None:
                cached = project_head(projection, snapshot)
                cached.weight_hash = snapshot.weight_hash
                projected[snapshot.weight_hash] = cached
            snapshot = cached

        gamma, grad_norm = compute_alignment_batch(
            latents, probs, rec.labels, snapshot, include_bias=include_bias
        )
        current.add_batch(gamma, sample_ids=rec.sample_ids)
        tracker.observe(rec.sample_ids, probs)
        if writer is not None:
            writer.write_batch(rec.sample_ids, rec.epoch, rec.step, gamma, grad_norm)

    close_epoch()
    return result


def ingest_path(path, **kwargs) -> IngestResult:
    with open(path, "rb") as fh:
        return ingest_stream(fh, **kwargs)


def offline_recompute(
    steps: list[StepRecord],
    snapshot: HeadSnapshot,
    beta: float = DEFAULT_BETA,
    include_bias: bool = False,
    retain_scores: bool = False,
) -> EpochDistribution:
    """Re-align one epoch's samples against a single fixed head snapshot.

    Probabilities are recomputed through the reference head from the stored
    latents (exact when the head is the whole model; head-level semantics
    otherwise), so both the gradients and the comparison vector are pinned
    to one point in time.
    """
    if not steps:
        raise ValueError("offline_recompute needs at least one step record")
    epoch = steps[0].epoch
    dist = EpochDistribution(epoch=epoch, beta=beta, retain_scores=retain_scores)
    w64 = snapshot.weights.astype(np.float64)
    b64 = snapshot.bias.astype(np.float64) if snapshot.bias is not None else None
    for rec in steps:
        if rec.epoch != epoch:
            raise ValueError("offline_recompute expects records from one epoch")
        logits = rec.latents.astype(np.float64) @ w64.T
        if b64 is not None:
            logits += b64
        probs = stable_softmax(logits).astype(np.float32)
        gamma, _ = compute_alignment_batch(
            rec.latents, probs, rec.labels, snapshot, include_bias=include_bias
        )
        dist.add_batch(gamma, sample_ids=rec.sample_ids)
    dist.summarize()
    return dist


def offline_series(
    source: BinaryIO,
    reference: str = "end",
    beta: float = DEFAULT_BETA,
    include_bias: bool = False,
) -> GwaSeries:
    """Offline estimate for every epoch in a trace.

    `reference` picks the fixed snapshot within each epoch: the weights at
    its first step ("start"), its middle step ("mid"), or the weights after
    its last update ("end", i.e. the next epoch's starting weights when
    available).
    """
    if reference not in ("start", "mid", "end"):
        raise ValueError(f"reference must be start|mid|end, got {reference!r}")
    reader = TraceReader(source)
    header = reader.header
    epochs: list[list[StepRecord]] = []
    for rec in reader:
        if not epochs or rec.epoch != epochs[-1][0].epoch:
            epochs.append([])
        epochs[-1].append(rec)

    series = GwaSeries(
        steps_per_epoch=header.steps_per_epoch,
        batch_size=header.batch_size,
        dataset_size=header.dataset_size,
    )
    for i, steps in enumerate(epochs):
        if reference == "start":
            snapshot = steps[0].snapshot
        elif reference == "mid":
            snapshot = steps[len(steps) // 2].snapshot
        else:
            # weights after the epoch's last update = next epoch's first
            # snapshot; the final epoch falls back to its last step's weights
            if i + 1 < len(epochs):
                snapshot = epochs[i + 1][0].snapshot
            else:
                snapshot = steps[-1].snapshot
        series.append(
            offline_recompute(
                steps, snapshot, beta=beta, include_bias=include_bias
            )
        )
    return series
