"""Per-sample analysis over alignment score files."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from ..errors import TraceMissing

# Spearman magnitudes above this would mean gamma and grad_norm carry the
# same information; the two are expected to stay distinct
REDUNDANCY_RHO = 0.95


@dataclass
class SampleRanking:
    """Ascending-gamma ranking for one epoch."""

    epoch: int
    sample_ids: np.ndarray
    gamma: np.ndarray
    grad_norm: np.ndarray
    excluded: int  # rows whose gamma was undefined

    def precision_at_k(self, positive_ids: np.ndarray, k: Optional[int] = None) -> Optional[float]:
        """Fraction of the k lowest-gamma samples that are true positives."""
        if len(positive_ids) == 0:
            return None
        if k is None:
            k = len(positive_ids)
        k = min(k, len(self.sample_ids))
        if k == 0:
            return None
        hits = np.isin(self.sample_ids[:k], positive_ids).sum()
        return float(hits / k)

    def to_json_obj(self, top: Optional[int] = None) -> dict:
        n = len(self.sample_ids) if top is None else min(top, len(self.sample_ids))
        return {
            "epoch": self.epoch,
            "excluded": self.excluded,
            "samples": [
                {
                    "sample_id": int(self.sample_ids[i]),
                    "gamma": float(self.gamma[i]),
                    "grad_norm": float(self.grad_norm[i]),
                }
                for i in range(n)
            ],
        }


def rank_samples(scores: np.ndarray, epoch: int) -> SampleRanking:
    """Rank one epoch's samples by ascending alignment.

    `scores` is the per-sample score array (see gwa.ingest.SCORE_DTYPE);
    undefined gammas are excluded from the ranking but counted. A sample
    seen several times in the epoch keeps its mean gamma.
    """
    rows = scores[scores["epoch"] == epoch]
    if len(rows) == 0:
        raise TraceMissing(f"no per-sample scores recorded for epoch {epoch}")
    defined = ~np.isnan(rows["gamma"])
    excluded = int(len(rows) - defined.sum())
    rows = rows[defined]
    ids, inverse = np.unique(rows["sample_id"], return_inverse=True)
    gamma = np.zeros(len(ids))
    norm = np.zeros(len(ids))
    counts = np.bincount(inverse, minlength=len(ids)).astype(np.float64)
    np.add.at(gamma, inverse, rows["gamma"].astype(np.float64))
    np.add.at(norm, inverse, rows["grad_norm"].astype(np.float64))
    gamma /= counts
    norm /= counts
    order = np.argsort(gamma, kind="stable")
    return SampleRanking(
        epoch=epoch,
        sample_ids=ids[order],
        gamma=gamma[order],
        grad_norm=norm[order],
        excluded=excluded,
    )


@dataclass
class NormCorrelationReport:
    """Per-epoch Spearman correlation between gamma and gradient norm."""

    epochs: list[int]
    rho: list[Optional[float]]
    distinct_measures: bool
    mean_gamma: list[float] = field(default_factory=list)
    mean_norm: list[float] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "epochs": self.epochs,
            "spearman_gamma_vs_grad_norm": self.rho,
            "distinct_measures": self.distinct_measures,
            "mean_gamma": self.mean_gamma,
            "mean_grad_norm": self.mean_norm,
            "redundancy_threshold": REDUNDANCY_RHO,
        }


def compare_gradient_norm(scores: np.ndarray) -> NormCorrelationReport:
    """Check that alignment and gradient norm quantify distinct things.

    Undefined-gamma rows are dropped from both series symmetrically.
    `distinct_measures` asserts |rho| < 0.95 in at least 80% of epochs with
    a defined correlation; the end-of-training norm/alignment drift is
    reported via the mean series, not asserted.
    """
    if len(scores) == 0:
        raise TraceMissing("per-sample score array is empty")
    epochs = sorted(int(e) for e in np.unique(scores["epoch"]))
    rhos: list[Optional[float]] = []
    mean_gamma: list[float] = []
    mean_norm: list[float] = []
    for epoch in epochs:
        rows = scores[scores["epoch"] == epoch]
        ok = ~np.isnan(rows["gamma"])
        g = rows["gamma"][ok].astype(np.float64)
        gn = rows["grad_norm"][ok].astype(np.float64)
        mean_gamma.append(float(g.mean()) if len(g) else float("nan"))
        mean_norm.append(float(gn.mean()) if len(gn) else float("nan"))
        if len(g) < 3 or np.ptp(g) == 0.0 or np.ptp(gn) == 0.0:
            rhos.append(None)  # constant series: correlation undefined
            continue
        rho = stats.spearmanr(g, gn).statistic
        rhos.append(None if np.isnan(rho) else float(rho))
    defined = [r for r in rhos if r is not None]
    if defined:
        distinct = np.mean([abs(r) < REDUNDANCY_RHO for r in defined]) >= 0.8
    else:
        distinct = True
    return NormCorrelationReport(
        epochs=epochs,
        rho=rhos,
        distinct_measures=bool(distinct),
        mean_gamma=mean_gamma,
        mean_norm=mean_norm,
    )
