"""Rank AUROC against brute-force pair counting, ROC curves, calibration."""

import numpy as np
import pytest

from cxrtrees.errors import ConfigError, DataError, DegenerateTruthError
from cxrtrees.evaluation import (
    AUTO_DELTA_GRID,
    ConfusionMatrix,
    Decision,
    ThresholdCalibration,
    auroc,
    calibrate_threshold,
    classify_with_band,
    confusion_matrix,
    roc_curve,
    trapezoid_area,
)


def pair_count_auroc(scores, truth):
    """Brute-force oracle: correct pairs get 1, ties get 0.5."""
    pos = [s for s, t in zip(scores, truth) if t == 1]
    neg = [s for s, t in zip(scores, truth) if t == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def random_instance(rng, max_n=50):
    n = int(rng.integers(2, max_n + 1))
    truth = rng.integers(0, 2, size=n)
    if truth.sum() == 0:
        truth[0] = 1
    if truth.sum() == n:
        truth[0] = 0
    # Coarse score grid forces plenty of ties.
    scores = rng.integers(0, 6, size=n) / 5.0
    return scores, truth


class TestAuroc:
    def test_perfect_ranking(self):
        assert auroc([0.9, 0.1], [1, 0]) == 1.0

    def test_all_ties_is_half(self):
        assert auroc([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0]) == 0.5

    def test_hand_pair_counting(self):
        scores = [0.8, 0.4, 0.6, 0.2]
        truth = [1, 1, 0, 0]
        expected = pair_count_auroc(scores, truth)
        assert expected == 0.75  # 3 of 4 pairs ranked correctly
        assert auroc(scores, truth) == expected

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(17)
        for _ in range(60):
            scores, truth = random_instance(rng)
            assert abs(auroc(scores, truth) - pair_count_auroc(scores, truth)) <= 1e-12

    def test_degenerate_truth_raises(self):
        with pytest.raises(DegenerateTruthError):
            auroc([0.1, 0.2], [1, 1])
        with pytest.raises(DegenerateTruthError):
            auroc([0.1, 0.2], [0, 0])

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(23)
        scores = rng.random(40)
        truth = rng.integers(0, 2, size=40)
        truth[:2] = [0, 1]
        before = auroc(scores, truth)
        assert auroc(np.exp(3.0 * scores) + 7.0, truth) == pytest.approx(before, abs=1e-12)

    def test_complement_identity_for_tie_free_scores(self):
        rng = np.random.default_rng(29)
        scores = rng.permutation(30) / 30.0
        truth = rng.integers(0, 2, size=30)
        truth[:2] = [0, 1]
        assert auroc(scores, truth) + auroc(-scores, truth) == pytest.approx(1.0, abs=1e-12)


class TestRocCurve:
    def test_perfect_separation_hits_corner(self):
        pts = roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert any(p.fpr == 0.0 and p.tpr == 1.0 for p in pts)
        assert (pts[0].fpr, pts[0].tpr) == (0.0, 0.0)
        assert (pts[-1].fpr, pts[-1].tpr) == (1.0, 1.0)

    def test_single_distinct_score(self):
        pts = roc_curve([0.5, 0.5, 0.5], [1, 0, 1])
        assert [(p.fpr, p.tpr) for p in pts] == [(0.0, 0.0), (1.0, 1.0)]
        assert trapezoid_area(pts) == pytest.approx(0.5, abs=1e-15)

    def test_area_agrees_with_rank_statistic(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            scores, truth = random_instance(rng)
            pts = roc_curve(scores, truth)
            assert trapezoid_area(pts) == pytest.approx(auroc(scores, truth), abs=1e-12)

    def test_monotone_as_threshold_decreases(self):
        rng = np.random.default_rng(37)
        scores, truth = random_instance(rng)
        pts = roc_curve(scores, truth)
        for a, b in zip(pts, pts[1:]):
            assert a.threshold > b.threshold
            assert a.tpr <= b.tpr and a.fpr <= b.fpr

    def test_one_point_per_distinct_score(self):
        scores = [0.1, 0.3, 0.3, 0.9]
        pts = roc_curve(scores, [0, 1, 0, 1])
        assert len(pts) == 1 + len(set(scores))


class TestCalibration:
    def test_threshold_is_mean(self):
        cal = calibrate_threshold(np.array([0.2, 0.4, 0.6]), ["x"])
        assert cal.thresholds[0] == pytest.approx(0.4, abs=1e-15)
        assert cal.delta == 0.05

    def test_constant_scores(self):
        cal = calibrate_threshold(np.full(10, 0.37), ["x"], delta=0.0)
        assert cal.thresholds[0] == pytest.approx(0.37, abs=1e-15)

    def test_empty_scores_rejected(self):
        with pytest.raises(DataError):
            calibrate_threshold(np.empty((0, 1)), ["x"])

    def test_auto_delta_matches_grid_scan_oracle(self):
        rng = np.random.default_rng(41)
        scores = rng.random((400, 2))
        target = 0.10
        cal = calibrate_threshold(scores, ["a", "b"], auto_target=target)
        # Oracle: independent scan of the documented grid.
        means = scores.mean(axis=0)
        expected = AUTO_DELTA_GRID[-1]
        for d in AUTO_DELTA_GRID:
            inside = (scores <= means + d) & (scores >= means - d)
            if d == 0.0:
                inside[:] = False
            if inside.mean() >= target:
                expected = d
                break
        assert cal.delta == expected
        frac = np.mean(classify_with_band(scores, cal) == Decision.UNCERTAIN)
        assert frac >= target

    def test_bad_auto_target(self):
        with pytest.raises(ConfigError):
            calibrate_threshold(np.ones((3, 1)) * 0.5, ["x"], auto_target=1.5)


class TestClassifyWithBand:
    def test_zero_delta_threshold_is_positive(self):
        cal = ThresholdCalibration(("x",), np.array([0.4]), 0.0)
        out = classify_with_band(np.array([0.4, 0.39999, 0.41]), cal)
        assert out.tolist() == [Decision.POSITIVE, Decision.NEGATIVE, Decision.POSITIVE]

    def test_band_catches_uncertain(self):
        cal = ThresholdCalibration(("x",), np.array([0.4]), 0.05)
        out = classify_with_band(np.array([0.42]), cal)
        assert out[0] == Decision.UNCERTAIN

    def test_hand_fixture_exact(self):
        # 20 scores classified by hand at t=0.5, delta=0.1.
        scores = np.array([
            0.05, 0.10, 0.35, 0.39, 0.40, 0.41, 0.45, 0.50, 0.55, 0.59,
            0.60, 0.61, 0.70, 0.85, 0.95, 1.00, 0.00, 0.25, 0.62, 0.58,
        ])
        hand = [
            "n", "n", "n", "n", "u", "u", "u", "u", "u", "u",
            "u", "p", "p", "p", "p", "p", "n", "n", "p", "u",
        ]
        code = {"n": Decision.NEGATIVE, "p": Decision.POSITIVE, "u": Decision.UNCERTAIN}
        cal = ThresholdCalibration(("x",), np.array([0.5]), 0.1)
        out = classify_with_band(scores, cal)
        assert out.tolist() == [code[h] for h in hand]

    def test_boundary_scores_are_uncertain_when_delta_positive(self):
        cal = ThresholdCalibration(("x",), np.array([0.5]), 0.1)
        out = classify_with_band(np.array([0.4, 0.6]), cal)
        assert out.tolist() == [Decision.UNCERTAIN, Decision.UNCERTAIN]


class TestConfusionMatrix:
    def test_all_correct_no_band(self):
        d = np.array([Decision.POSITIVE, Decision.NEGATIVE], dtype=np.int8)
        cm = confusion_matrix(d, [1, 0])
        assert (cm.tp, cm.fp, cm.tn, cm.fn, cm.uncertain) == (1, 0, 1, 0, 0)

    def test_uncertain_counted_regardless_of_truth(self):
        d = np.array(
            [Decision.POSITIVE, Decision.NEGATIVE, Decision.UNCERTAIN], dtype=np.int8
        )
        cm = confusion_matrix(d, [1, 1, 0])
        assert (cm.tp, cm.fn, cm.uncertain) == (1, 1, 1)
        assert cm.fp == cm.tn == 0

    def test_counts_partition_total(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            n = int(rng.integers(1, 60))
            d = rng.integers(0, 3, size=n).astype(np.int8)
            t = rng.integers(0, 2, size=n)
            assert confusion_matrix(d, t).total == n

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            confusion_matrix(np.array([1], dtype=np.int8), [1, 0])

    def test_as_dict(self):
        cm = ConfusionMatrix(1, 2, 3, 4, 5)
        assert cm.as_dict() == {"tp": 1, "fp": 2, "tn": 3, "fn": 4, "uncertain": 5}
