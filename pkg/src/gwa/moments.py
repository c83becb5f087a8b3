"""Epoch-level alignment distributions.

A single pass over per-sample alignment scores maintains central moments up
to order four with pairwise-update (Welford/Pebay) formulas, so epoch
accumulators are mergeable across shards and never need the raw scores.
Raw-score retention is optional and enables the store-then-compute
cross-check and per-sample analysis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from .errors import EpochMismatch, MomentMismatch, TooFewSamples, Unstable

DEFAULT_BETA = 1.2
# m2 below this is a constant distribution; kurtosis carries no information.
VARIANCE_FLOOR = 1e-12
# gwa denominators at or below this are meaningless.
DENOMINATOR_FLOOR = 1e-6
# fourth-moment estimates are noise below this count.
MIN_FINALIZE_COUNT = 30
# near-uniform tailedness with real spread hints at a bimodal distribution.
BIMODAL_KURTOSIS_BAND = 0.1
BIMODAL_VARIANCE_MIN = 0.02

FLAG_DEGENERATE = "degenerate"
FLAG_UNSTABLE = "unstable"
FLAG_TOO_FEW = "too_few_samples"
FLAG_BIMODAL_HINT = "bimodal_hint"


class RunningMoments:
    """One-pass accumulator for mean and central moments up to order 4.

    Internally stores raw sums of deviation powers (M2..M4), which merge
    exactly; normalized moments are exposed as properties.
    """

    __slots__ = ("n", "mean", "M2", "M3", "M4")

    def __init__(self) -> None:
        self.n = 0
        self.mean = 0.0
        self.M2 = 0.0
        self.M3 = 0.0
        self.M4 = 0.0

    def push(self, x: float) -> None:
        n1 = self.n
        self.n += 1
        n = self.n
        delta = x - self.mean
        delta_n = delta / n
        delta_n2 = delta_n * delta_n
        term1 = delta * delta_n * n1
        self.mean += delta_n
        self.M4 += (
            term1 * delta_n2 * (n * n - 3 * n + 3)
            + 6 * delta_n2 * self.M2
            - 4 * delta_n * self.M3
        )
        self.M3 += term1 * delta_n * (n - 2) - 3 * delta_n * self.M2
        self.M2 += term1

    def push_many(self, xs: Sequence[float] | np.ndarray) -> None:
        """Fold a batch in via the kernel backend (batch stats, then merge)."""
        xs = np.asarray(xs, dtype=np.float64)
        if xs.size == 0:
            return
        from . import _kernels

        n, mean, m2, m3, m4 = _kernels.batch_raw_moments(np.ascontiguousarray(xs))
        self._merge_raw(n, mean, m2, m3, m4)

    def merge(self, other: "RunningMoments") -> None:
        self._merge_raw(other.n, other.mean, other.M2, other.M3, other.M4)

    def _merge_raw(self, nb: int, mb: float, M2b: float, M3b: float, M4b: float) -> None:
        if nb == 0:
            return
        na, ma = self.n, self.mean
        if na == 0:
            self.n, self.mean, self.M2, self.M3, self.M4 = nb, mb, M2b, M3b, M4b
            return
        n = na + nb
        delta = mb - ma
        delta2 = delta * delta
        M2a, M3a, M4a = self.M2, self.M3, self.M4
        self.mean = ma + delta * nb / n
        self.M2 = M2a + M2b + delta2 * na * nb / n
        self.M3 = (
            M3a
            + M3b
            + delta * delta2 * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * M2b - nb * M2a) / n
        )
        self.M4 = (
            M4a
            + M4b
            + delta2 * delta2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * delta2 * (na * na * M2b + nb * nb * M2a) / (n * n)
            + 4.0 * delta * (na * M3b - nb * M3a) / n
        )
        self.n = n

    @classmethod
    def from_values(cls, xs: Sequence[float] | np.ndarray) -> "RunningMoments":
        """Two-pass construction; reference path for raw-score retention."""
        xs = np.asarray(xs, dtype=np.float64)
        rm = cls()
        if xs.size == 0:
            return rm
        rm.n = int(xs.size)
        rm.mean = float(xs.mean())
        dev = xs - rm.mean
        d2 = dev * dev
        rm.M2 = float(d2.sum())
        rm.M3 = float((d2 * dev).sum())
        rm.M4 = float((d2 * d2).sum())
        return rm

    @classmethod
    def from_stats(cls, n: int, m1: float, m2: float, m3: float, m4: float) -> "RunningMoments":
        """Rebuild from normalized moments (e.g. parsed epoch summaries)."""
        rm = cls()
        rm.n = n
        rm.mean = m1
        rm.M2 = m2 * n
        rm.M3 = m3 * n
        rm.M4 = m4 * n
        return rm

    # normalized (population) central moments
    @property
    def m1(self) -> float:
        return self.mean

    @property
    def m2(self) -> float:
        return self.M2 / self.n if self.n else 0.0

    @property
    def m3(self) -> float:
        return self.M3 / self.n if self.n else 0.0

    @property
    def m4(self) -> float:
        return self.M4 / self.n if self.n else 0.0

    @property
    def excess_kurtosis(self) -> float:
        m2 = self.m2
        if self.n == 0 or m2 < VARIANCE_FLOOR:
            return math.nan
        return self.m4 / (m2 * m2) - 3.0


@dataclass
class EpochDistribution:
    """Alignment-score distribution for one epoch.

    `excluded` counts scores whose gamma was undefined (zero gradients);
    they never enter the moments. With `retain_scores`, every defined
    (sample_id, gamma) pair is kept for per-sample analysis and for the
    store-then-compute consistency check.
    """

    epoch: int
    beta: float = DEFAULT_BETA
    retain_scores: bool = False
    moments: RunningMoments = field(default_factory=RunningMoments)
    excluded: int = 0
    raw_scores: list[tuple[Optional[int], float]] = field(default_factory=list)
    flags: set[str] = field(default_factory=set)
    # summary dict cached by summarize()/from_summary(); invalidated by
    # further accumulation
    _finalized: Optional[dict] = field(default=None, repr=False)

    def add(self, score) -> None:
        """Accumulate one AlignmentScore (checks epoch provenance)."""
        if score.epoch != self.epoch:
            raise EpochMismatch(
                f"score from epoch {score.epoch} fed to epoch {self.epoch} accumulator"
            )
        self.add_value(score.gamma, sample_id=score.sample_id)

    def add_value(self, gamma: Optional[float], sample_id: Optional[int] = None) -> None:
        self._finalized = None
        if gamma is None or math.isnan(gamma):
            self.excluded += 1
            return
        self.moments.push(float(gamma))
        if self.retain_scores:
            self.raw_scores.append((sample_id, float(gamma)))

    def add_batch(self, gammas: np.ndarray, sample_ids: Optional[np.ndarray] = None) -> None:
        """Accumulate a float64 batch; NaN entries count as excluded."""
        self._finalized = None
        gammas = np.asarray(gammas, dtype=np.float64)
        defined = ~np.isnan(gammas)
        self.excluded += int(gammas.size - defined.sum())
        vals = gammas[defined]
        self.moments.push_many(vals)
        if self.retain_scores and vals.size:
            if sample_ids is None:
                self.raw_scores.extend((None, float(g)) for g in vals)
            else:
                ids = np.asarray(sample_ids)[defined]
                self.raw_scores.extend(
                    (int(i), float(g)) for i, g in zip(ids, vals)
                )

    def merge(self, other: "EpochDistribution") -> "EpochDistribution":
        if other.epoch != self.epoch:
            raise EpochMismatch(f"cannot merge epochs {self.epoch} and {other.epoch}")
        if other.beta != self.beta:
            raise EpochMismatch("cannot merge distributions with different beta")
        out = EpochDistribution(
            epoch=self.epoch, beta=self.beta, retain_scores=self.retain_scores
        )
        out.moments.merge(self.moments)
        out.moments.merge(other.moments)
        out.excluded = self.excluded + other.excluded
        if out.retain_scores:
            out.raw_scores = list(self.raw_scores) + list(other.raw_scores)
        return out

    # --- views ---

    @property
    def count(self) -> int:
        return self.moments.n

    @property
    def m1(self) -> float:
        return self.moments.m1

    @property
    def m2(self) -> float:
        return self.moments.m2

    @property
    def m3(self) -> float:
        return self.moments.m3

    @property
    def m4(self) -> float:
        return self.moments.m4

    @property
    def excess_kurtosis(self) -> float:
        return self.moments.excess_kurtosis

    @property
    def degenerate(self) -> bool:
        return self.count > 0 and self.m2 < VARIANCE_FLOOR

    @property
    def gwa(self) -> Optional[float]:
        """GWA value with non-raising semantics: None when unusable.

        After summarize() (or a JSON round trip) this returns the finalized
        value, so consumers see exactly what the epoch summary emitted.
        """
        if self._finalized is not None:
            return self._finalized["gwa"]
        try:
            return finalize_gwa(self, beta=self.beta)
        except (Unstable, TooFewSamples):
            return None

    def check_consistency(self, rtol: float = 1e-10) -> None:
        """Assert streaming moments match store-then-compute on retained scores."""
        if not self.retain_scores:
            return
        ref = RunningMoments.from_values([g for _, g in self.raw_scores])
        scale2 = max(ref.m2, VARIANCE_FLOOR)
        for k, (got, want) in enumerate(
            [
                (self.m1, ref.m1),
                (self.m2, ref.m2),
                (self.m3, ref.m3),
                (self.m4, ref.m4),
            ],
            start=1,
        ):
            # tolerance relative to the moment's natural scale m2^(k/2)
            tol = rtol * max(abs(want), scale2 ** (k / 2.0))
            if abs(got - want) > tol:
                raise MomentMismatch(
                    f"epoch {self.epoch}: streaming m{k}={got!r} vs two-pass {want!r}"
                )

    def summarize(self, min_count: int = MIN_FINALIZE_COUNT) -> dict:
        """Finalize into a JSON-ready summary; failures turn into flags."""
        flags = set(self.flags)
        gwa_val: Optional[float] = None
        ek = self.excess_kurtosis
        if self.degenerate:
            flags.add(FLAG_DEGENERATE)
        try:
            gwa_val = finalize_gwa(self, beta=self.beta, min_count=min_count)
        except Unstable:
            flags.add(FLAG_UNSTABLE)
        except TooFewSamples:
            flags.add(FLAG_TOO_FEW)
        if (
            not math.isnan(ek)
            and abs(ek + 1.2) < BIMODAL_KURTOSIS_BAND
            and self.m2 > BIMODAL_VARIANCE_MIN
        ):
            flags.add(FLAG_BIMODAL_HINT)
        self.flags = flags
        summary = {
            "epoch": self.epoch,
            "count": self.count,
            "excluded": self.excluded,
            "m1": self.m1,
            "m2": self.m2,
            "m3": self.m3,
            "m4": self.m4,
            "excess_kurtosis": None if math.isnan(ek) else ek,
            "gwa": gwa_val,
            "beta": self.beta,
            "flags": sorted(flags),
        }
        self._finalized = summary
        return summary

    def to_json_line(self) -> str:
        summary = self._finalized if self._finalized is not None else self.summarize()
        return json.dumps(summary, allow_nan=False)

    @classmethod
    def from_summary(cls, obj: dict) -> "EpochDistribution":
        dist = cls(epoch=int(obj["epoch"]), beta=float(obj.get("beta", DEFAULT_BETA)))
        dist.moments = RunningMoments.from_stats(
            int(obj["count"]), obj["m1"], obj["m2"], obj["m3"], obj["m4"]
        )
        dist.excluded = int(obj.get("excluded", 0))
        dist.flags = set(obj.get("flags", []))
        dist._finalized = dict(obj)
        return dist


def accumulate(dist: EpochDistribution, score) -> EpochDistribution:
    """Functional form of EpochDistribution.add; returns the mutated dist."""
    dist.add(score)
    return dist


def merge(a: EpochDistribution, b: EpochDistribution) -> EpochDistribution:
    return a.merge(b)


def finalize_gwa(
    dist: EpochDistribution,
    beta: float = DEFAULT_BETA,
    min_count: int = MIN_FINALIZE_COUNT,
) -> float:
    """Kurtosis-corrected mean of the epoch's alignment distribution.

    Constant distributions (m2 below the variance floor) carry no tail
    information; the value falls back to m1/beta and the epoch is flagged
    degenerate by summarize().
    """
    if dist.count < min_count:
        raise TooFewSamples(
            f"epoch {dist.epoch}: {dist.count} defined scores < {min_count}"
        )
    if dist.degenerate:
        return dist.m1 / beta
    denom = dist.excess_kurtosis + beta
    if denom <= DENOMINATOR_FLOOR:
        raise Unstable(
            f"epoch {dist.epoch}: denominator {denom!r} <= {DENOMINATOR_FLOOR}"
        )
    return dist.m1 / denom


@dataclass
class GwaSeries:
    """Ordered per-epoch summaries plus the run geometry they came from."""

    epochs: list[EpochDistribution] = field(default_factory=list)
    total_steps: Optional[int] = None
    steps_per_epoch: Optional[int] = None
    batch_size: Optional[int] = None
    dataset_size: Optional[int] = None

    def __post_init__(self) -> None:
        nums = [e.epoch for e in self.epochs]
        if any(b <= a for a, b in zip(nums, nums[1:])):
            raise ValueError(f"epoch indices must strictly increase, got {nums}")
        k, b, n = self.steps_per_epoch, self.batch_size, self.dataset_size
        if k and b and n:
            if k * b < n or (k - 1) * b >= n:
                raise ValueError(
                    f"steps_per_epoch*batch_size must cover dataset_size with at "
                    f"most one partial batch (K={k}, b={b}, N={n})"
                )

    def __len__(self) -> int:
        return len(self.epochs)

    def gwa_values(self) -> list[Optional[float]]:
        return [e.gwa for e in self.epochs]

    def append(self, dist: EpochDistribution) -> None:
        if self.epochs and dist.epoch <= self.epochs[-1].epoch:
            raise ValueError(
                f"epoch {dist.epoch} does not extend series ending at "
                f"{self.epochs[-1].epoch}"
            )
        self.epochs.append(dist)

    def write_jsonl(self, sink: IO[str]) -> None:
        for dist in self.epochs:
            sink.write(dist.to_json_line())
            sink.write("\n")

    @classmethod
    def from_jsonl(cls, lines: Iterable[str], **meta) -> "GwaSeries":
        epochs = [
            EpochDistribution.from_summary(json.loads(line))
            for line in lines
            if line.strip()
        ]
        return cls(epochs=epochs, **meta)
