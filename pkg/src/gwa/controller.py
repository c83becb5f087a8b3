"""Checkpoint selection from a completed per-epoch alignment series.

All rules are retrospective: they pick an epoch of a finished run. A live
variant with patience is provided for convenience but the retrospective
rules are the reference semantics. Epochs whose value is unusable
(unstable denominator, degenerate variance, too few samples) are skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import AllEpochsExcluded, LengthMismatch
from .moments import FLAG_DEGENERATE, GwaSeries


class Criterion(Enum):
    GWA_SCRATCH = "gwa_scratch"
    GWA_FINETUNE = "gwa_finetune"
    LABELWAVE = "labelwave"
    VAL_ACCURACY = "val_accuracy"


@dataclass
class StopDecision:
    selected_epoch: int
    criterion: Criterion
    warmup_epochs: int
    rationale: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "selected_epoch": self.selected_epoch,
            "criterion": self.criterion.value,
            "warmup_epochs": self.warmup_epochs,
            "rationale": self.rationale,
        }


@dataclass
class PredictionChangeSeries:
    """Per-epoch fraction of samples whose argmax changed; first epoch None."""

    fractions: list[Optional[float]]

    def __post_init__(self) -> None:
        if self.fractions and self.fractions[0] is not None:
            raise ValueError("change fraction is undefined for the first epoch")
        for f in self.fractions[1:]:
            if f is not None and not 0.0 <= f <= 1.0:
                raise ValueError(f"change fraction {f} outside [0, 1]")


def warmup_cutoff(n_epochs: int, warmup_fraction: float) -> int:
    """Number of leading epochs masked out, rounded up to whole epochs."""
    if not 0.0 <= warmup_fraction < 1.0:
        raise ValueError(f"warmup_fraction must be in [0, 1), got {warmup_fraction}")
    return math.ceil(warmup_fraction * n_epochs)


def _usable_values(series: GwaSeries) -> list[Optional[float]]:
    vals: list[Optional[float]] = []
    for dist in series.epochs:
        v = dist.gwa
        if v is None or FLAG_DEGENERATE in dist.flags or dist.degenerate:
            vals.append(None)
        else:
            vals.append(v)
    return vals


def _argmax_after(
    values: Sequence[Optional[float]], start: int
) -> Optional[int]:
    """Earliest index attaining the max among non-None values from start on."""
    best_i: Optional[int] = None
    best_v = -math.inf
    for i in range(start, len(values)):
        v = values[i]
        if v is not None and v > best_v:
            best_v = v
            best_i = i
    return best_i


def select_scratch(series: GwaSeries, warmup_fraction: float = 0.10) -> StopDecision:
    """Epoch with maximal value after warmup; ties break to the earliest."""
    if not series.epochs:
        raise AllEpochsExcluded("empty series")
    values = _usable_values(series)
    cutoff = warmup_cutoff(len(values), warmup_fraction)
    idx = _argmax_after(values, cutoff)
    if idx is None:
        raise AllEpochsExcluded(
            f"no usable epoch after warmup cutoff {cutoff} of {len(values)}"
        )
    return StopDecision(
        selected_epoch=series.epochs[idx].epoch,
        criterion=Criterion.GWA_SCRATCH,
        warmup_epochs=cutoff,
        rationale={
            "max_gwa": values[idx],
            "eligible_epochs": sum(v is not None for v in values[cutoff:]),
        },
    )


def _first_local_minimum(
    values: Sequence[Optional[float]], window: int, min_rise: float
) -> Optional[int]:
    """First index that is <= all `window` neighbors per side and later rises.

    Edges never qualify: a minimum needs a full window on both sides.
    None-valued epochs disqualify any window they fall into.
    """
    n = len(values)
    for i in range(window, n - window):
        center = values[i]
        if center is None:
            continue
        neighbors = values[i - window : i] + values[i + 1 : i + window + 1]
        if any(v is None for v in neighbors):
            continue
        if any(v < center for v in neighbors):
            continue
        later = [v for v in values[i + 1 :] if v is not None]
        if later and max(later) > center + min_rise:
            return i
    return None


def select_finetune(
    series: GwaSeries, min_window: int = 3, min_rise: float = 0.0
) -> StopDecision:
    """Skip past the initial alignment dip, then take the maximum.

    Warm-started runs first dip while adapting to the new data, so the
    scratch rule's global maximum can sit in the pre-dip regime. Finds the
    first local minimum (window per side, followed by a rise > min_rise)
    and selects the maximal epoch strictly after it. Falls back to the
    scratch rule when no dip exists.
    """
    if len(series.epochs) < 2 * min_window:
        raise ValueError(
            f"series of {len(series.epochs)} epochs too short for window {min_window}"
        )
    values = _usable_values(series)
    dip = _first_local_minimum(values, min_window, min_rise)
    if dip is None:
        fallback = select_scratch(series)
        fallback.criterion = Criterion.GWA_FINETUNE
        fallback.rationale["fallback"] = "no_initial_minimum"
        return fallback
    idx = _argmax_after(values, dip + 1)
    if idx is None:
        raise AllEpochsExcluded(f"no usable epoch after dip at index {dip}")
    return StopDecision(
        selected_epoch=series.epochs[idx].epoch,
        criterion=Criterion.GWA_FINETUNE,
        warmup_epochs=0,
        rationale={
            "minimum_epoch": series.epochs[dip].epoch,
            "minimum_gwa": values[dip],
            "max_gwa": values[idx],
        },
    )


def prediction_changes(predictions_by_epoch: Sequence[np.ndarray]) -> PredictionChangeSeries:
    """Fraction of argmax predictions that changed between consecutive epochs."""
    if len(predictions_by_epoch) < 2:
        raise LengthMismatch("need at least two epochs of predictions")
    first = np.asarray(predictions_by_epoch[0])
    fractions: list[Optional[float]] = [None]
    prev = first
    for i, preds in enumerate(predictions_by_epoch[1:], start=1):
        preds = np.asarray(preds)
        if preds.shape != prev.shape:
            raise LengthMismatch(
                f"epoch {i} has {preds.shape} predictions, expected {prev.shape}"
            )
        fractions.append(float(np.mean(preds != prev)))
        prev = preds
    return PredictionChangeSeries(fractions)


def labelwave(
    predictions_by_epoch: Sequence[np.ndarray],
    warmup_fraction: float = 0.10,
) -> tuple[PredictionChangeSeries, StopDecision]:
    """Prediction-change baseline: stop where predictions churn least.

    Approximation of the published rule, which this engine only knows as
    "track prediction changes"; reports label it accordingly.
    """
    changes = prediction_changes(predictions_by_epoch)
    return changes, decide_from_changes(changes, warmup_fraction)


def decide_from_changes(
    changes: PredictionChangeSeries, warmup_fraction: float = 0.10
) -> StopDecision:
    fr = changes.fractions
    cutoff = warmup_cutoff(len(fr), warmup_fraction)
    best_i: Optional[int] = None
    best_v = math.inf
    for i in range(max(cutoff, 1), len(fr)):
        v = fr[i]
        if v is not None and v < best_v:
            best_v = v
            best_i = i
    if best_i is None:
        raise AllEpochsExcluded("no epoch with a defined change fraction after warmup")
    return StopDecision(
        selected_epoch=best_i,
        criterion=Criterion.LABELWAVE,
        warmup_epochs=cutoff,
        rationale={"min_change_fraction": best_v, "approximation": True},
    )


def select_live(
    series: GwaSeries,
    patience: int,
    warmup_fraction: float = 0.10,
) -> StopDecision:
    """Convenience live rule: stop after `patience` epochs without a new max.

    Returns the best epoch seen when the rule fires (or the best overall if
    it never does). Retrospective selection remains the reference.
    """
    if patience < 1:
        raise ValueError("patience must be >= 1")
    values = _usable_values(series)
    cutoff = warmup_cutoff(len(values), warmup_fraction)
    best_i: Optional[int] = None
    best_v = -math.inf
    stopped_at: Optional[int] = None
    for i in range(cutoff, len(values)):
        v = values[i]
        if v is not None and v > best_v:
            best_v = v
            best_i = i
        elif best_i is not None and i - best_i >= patience:
            stopped_at = i
            break
    if best_i is None:
        raise AllEpochsExcluded("no usable epoch after warmup")
    return StopDecision(
        selected_epoch=series.epochs[best_i].epoch,
        criterion=Criterion.GWA_SCRATCH,
        warmup_epochs=cutoff,
        rationale={"live_patience": patience, "stopped_at_epoch_index": stopped_at},
    )
