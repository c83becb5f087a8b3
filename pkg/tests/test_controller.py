"""Stopping rules over synthetic series."""

import numpy as np
import pytest

from gwa import (
    EpochDistribution,
    GwaSeries,
    labelwave,
    select_finetune,
    select_live,
    select_scratch,
)
from gwa.controller import Criterion, prediction_changes, warmup_cutoff
from gwa.errors import AllEpochsExcluded, LengthMismatch
from gwa.moments import RunningMoments


def series_from_gwa(values, unusable=()):
    """Build a series whose per-epoch gwa equals the given values.

    With zero excess kurtosis the accumulator yields gwa = m1/1.2, so each
    epoch's mean is set to 1.2 * value. Indices in `unusable` get an
    unstable (kurtosis below -1.2) distribution instead.
    """
    series = GwaSeries()
    for epoch, v in enumerate(values):
        dist = EpochDistribution(epoch=epoch)
        if epoch in unusable:
            dist.moments = RunningMoments.from_stats(100, 0.0, 0.01, 0.0, 0.5 * 1e-4)
        else:
            dist.moments = RunningMoments.from_stats(100, 1.2 * v, 0.01, 0.0, 3e-4)
        dist.summarize()
        series.append(dist)
    return series


class TestWarmup:
    def test_cutoff_rounds_up(self):
        assert warmup_cutoff(4, 0.10) == 1
        assert warmup_cutoff(4, 0.25) == 1
        assert warmup_cutoff(100, 0.10) == 10
        assert warmup_cutoff(10, 0.0) == 0

    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            warmup_cutoff(10, 1.0)


class TestSelectScratch:
    def test_unique_maximum_after_warmup(self):
        s = series_from_gwa([0.1, 0.5, 0.4, 0.3])
        decision = select_scratch(s, warmup_fraction=0.10)
        assert decision.selected_epoch == 1
        assert decision.warmup_epochs == 1
        assert decision.criterion is Criterion.GWA_SCRATCH

    def test_warmup_masks_early_peak_and_ties_break_early(self):
        s = series_from_gwa([0.9, 0.1, 0.2, 0.2])
        decision = select_scratch(s, warmup_fraction=0.25)
        assert decision.selected_epoch == 2

    def test_zero_warmup_returns_global_maximum(self):
        s = series_from_gwa([0.3, 0.7, 0.2])
        assert select_scratch(s, warmup_fraction=0.0).selected_epoch == 1

    def test_unusable_epochs_are_skipped(self):
        s = series_from_gwa([0.1, 0.9, 0.4, 0.3], unusable={1})
        assert select_scratch(s, warmup_fraction=0.0).selected_epoch == 2

    def test_all_excluded_raises(self):
        s = series_from_gwa([0.1, 0.2], unusable={0, 1})
        with pytest.raises(AllEpochsExcluded):
            select_scratch(s)
        with pytest.raises(AllEpochsExcluded):
            select_scratch(GwaSeries())

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0.05, 0.6, 30)
        base = select_scratch(series_from_gwa(values)).selected_epoch
        for transform in (lambda v: v * 3.0, lambda v: v**3, lambda v: np.tanh(v)):
            assert (
                select_scratch(series_from_gwa(transform(values))).selected_epoch == base
            )

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        values = rng.uniform(0, 0.5, 50)
        a = select_scratch(series_from_gwa(values))
        b = select_scratch(series_from_gwa(values))
        assert a.selected_epoch == b.selected_epoch
        assert a.to_json_obj() == b.to_json_obj()


class TestSelectFinetune:
    def test_dip_then_peak(self):
        s = series_from_gwa([0.8, 0.6, 0.5, 0.55, 0.7, 0.65])
        decision = select_finetune(s, min_window=1)
        assert decision.rationale["minimum_epoch"] == 2
        assert decision.selected_epoch == 4

    def test_monotone_increase_falls_back_to_scratch(self):
        s = series_from_gwa([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
        decision = select_finetune(s, min_window=1)
        assert decision.rationale.get("fallback") == "no_initial_minimum"
        assert decision.selected_epoch == 5
        assert decision.criterion is Criterion.GWA_FINETUNE

    def test_min_rise_filters_shallow_dips(self):
        values = [0.8, 0.6, 0.5, 0.52, 0.53, 0.5]
        shallow = select_finetune(series_from_gwa(values), min_window=1, min_rise=0.1)
        assert shallow.rationale.get("fallback") == "no_initial_minimum"
        deep = select_finetune(series_from_gwa(values), min_window=1, min_rise=0.0)
        assert deep.rationale["minimum_epoch"] == 2

    def test_window_requires_full_neighborhood(self):
        # epoch 0 is the global minimum but has no left neighbors
        s = series_from_gwa([0.1, 0.3, 0.5, 0.4, 0.45, 0.2])
        decision = select_finetune(s, min_window=1)
        # first interior dip is epoch 3 (0.4 <= 0.5, 0.45, then rises)
        assert decision.rationale["minimum_epoch"] == 3
        assert decision.selected_epoch == 4

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            select_finetune(series_from_gwa([0.1, 0.2, 0.3]), min_window=3)


class TestLabelWave:
    def test_change_fractions(self):
        preds = [
            np.array([0, 1, 2, 0]),
            np.array([0, 1, 2, 0]),
            np.array([1, 0, 2, 0]),
            np.array([2, 2, 0, 1]),
        ]
        changes, decision = labelwave(preds, warmup_fraction=0.0)
        assert changes.fractions[0] is None
        assert changes.fractions[1] == 0.0
        assert changes.fractions[2] == pytest.approx(0.5)
        assert changes.fractions[3] == pytest.approx(1.0)
        assert decision.selected_epoch == 1
        assert decision.criterion is Criterion.LABELWAVE
        assert decision.rationale["approximation"] is True

    def test_identical_and_flipped(self):
        same = prediction_changes([np.zeros(5), np.zeros(5)])
        assert same.fractions[1] == 0.0
        flipped = prediction_changes([np.zeros(5), np.ones(5)])
        assert flipped.fractions[1] == 1.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            prediction_changes([np.zeros(5), np.zeros(4)])
        with pytest.raises(LengthMismatch):
            prediction_changes([np.zeros(5)])

    def test_warmup_applies(self):
        preds = [np.zeros(4), np.zeros(4), np.ones(4), np.ones(4)]
        # change fractions: [None, 0, 1, 0]; warmup 60% masks epochs 0-2
        _, decision = labelwave(preds, warmup_fraction=0.6)
        assert decision.selected_epoch == 3


class TestSelectLive:
    def test_matches_retrospective_when_peak_is_early(self):
        values = [0.1, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.0, 0.0]
        s = series_from_gwa(values)
        live = select_live(s, patience=3, warmup_fraction=0.0)
        assert live.selected_epoch == 1
        assert live.rationale["stopped_at_epoch_index"] == 4

    def test_never_fires_returns_best(self):
        s = series_from_gwa([0.1, 0.2, 0.3, 0.4])
        live = select_live(s, patience=10, warmup_fraction=0.0)
        assert live.selected_epoch == 3
        assert live.rationale["stopped_at_epoch_index"] is None
