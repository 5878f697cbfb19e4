"""AUROC, ROC curves, threshold calibration with an uncertain band, confusion.

AUROC is the rank statistic: the fraction of positive/negative pairs ranked
correctly, with ties worth half.  The trapezoidal area under the ROC curve is
kept as an independent cross-check and agrees to within 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, DegenerateTruthError


class Decision(IntEnum):
    NEGATIVE = 0
    POSITIVE = 1
    UNCERTAIN = 2


def _check_scores_truth(scores, truth) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth)
    if s.ndim != 1 or t.ndim != 1 or len(s) != len(t):
        raise DataError("scores and truth must be 1-D and the same length")
    if not np.isin(t, (0, 1)).all():
        raise DataError("truth values must be 0 or 1")
    t = t.astype(np.int64)
    n_pos = int(t.sum())
    if n_pos == 0 or n_pos == len(t):
        raise DegenerateTruthError(
            f"truth contains only one class ({n_pos} positives of {len(t)})"
        )
    return s, t


def auroc(scores: Sequence[float], truth: Sequence[int]) -> float:
    """Probability a random positive outranks a random negative (ties: 0.5)."""
    s, t = _check_scores_truth(scores, truth)
    n = len(s)
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    boundaries = np.flatnonzero(np.diff(s_sorted)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    # Average 1-based rank within each tie group.
    avg_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(avg_rank, ends - starts)
    n_pos = int(t.sum())
    n_neg = n - n_pos
    rank_sum = float(ranks[t == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


def roc_curve(scores: Sequence[float], truth: Sequence[int]) -> list[RocPoint]:
    """One point per distinct score (classifying score >= threshold as
    positive), preceded by the (0, 0) endpoint at threshold +inf.  The final
    point is always (1, 1)."""
    s, t = _check_scores_truth(scores, truth)
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    t_sorted = t[order]
    cum_tp = np.cumsum(t_sorted)
    cum_fp = np.cumsum(1 - t_sorted)
    n_pos = int(t.sum())
    n_neg = len(t) - n_pos
    ends = np.concatenate((np.flatnonzero(np.diff(s_sorted)), [len(s) - 1]))
    points = [RocPoint(float("inf"), 0.0, 0.0)]
    for e in ends:
        points.append(
            RocPoint(float(s_sorted[e]), cum_tp[e] / n_pos, cum_fp[e] / n_neg)
        )
    return points


def trapezoid_area(points: Sequence[RocPoint]) -> float:
    """Area under the ROC polyline; cross-check for the rank statistic."""
    fpr = np.array([p.fpr for p in points])
    tpr = np.array([p.tpr for p in points])
    return float(np.trapezoid(tpr, fpr))


@dataclass(frozen=True)
class ThresholdCalibration:
    """Per-label decision thresholds and the shared uncertain band half-width."""

    labels: tuple[str, ...]
    thresholds: np.ndarray  # float64, shape (L,)
    delta: float

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        if t.shape != (len(self.labels),):
            raise DataError("one threshold per label required")
        if t.size and (t.min() < 0.0 or t.max() > 1.0):
            raise DataError("thresholds must lie in [0, 1]")
        if self.delta < 0.0:
            raise ConfigError("band half-width must be >= 0")
        t.flags.writeable = False
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "labels", tuple(self.labels))


#: Grid scanned when auto-tuning the uncertain band half-width.
AUTO_DELTA_GRID = tuple(round(0.01 * i, 2) for i in range(26))


def _as_score_matrix(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    return s.reshape(-1, 1) if s.ndim == 1 else s


def calibrate_threshold(
    validation_scores: np.ndarray,
    labels: Sequence[str] | None = None,
    delta: float = 0.05,
    auto_target: float | None = None,
) -> ThresholdCalibration:
    """Set each label's threshold to its mean validation score.

    With auto_target, delta is instead the smallest grid value whose pooled
    uncertain fraction on the validation scores reaches the target.
    """
    s = _as_score_matrix(validation_scores)
    if s.shape[0] == 0:
        raise DataError("cannot calibrate on empty scores")
    names = tuple(labels) if labels is not None else tuple(
        f"label_{j}" for j in range(s.shape[1])
    )
    if len(names) != s.shape[1]:
        raise DataError(f"{len(names)} labels for {s.shape[1]} score columns")
    thresholds = s.mean(axis=0)

    if auto_target is not None:
        if not (0.0 < auto_target < 1.0):
            raise ConfigError("auto target fraction must be in (0, 1)")
        delta = AUTO_DELTA_GRID[-1]
        for d in AUTO_DELTA_GRID:
            cal = ThresholdCalibration(names, thresholds, d)
            frac = float(np.mean(classify_with_band(s, cal) == Decision.UNCERTAIN))
            if frac >= auto_target:
                delta = d
                break
    return ThresholdCalibration(names, thresholds, float(delta))


def classify_with_band(scores: np.ndarray, cal: ThresholdCalibration) -> np.ndarray:
    """Three-way decisions: positive above t+delta, negative below t-delta,
    uncertain inside the band.  With delta == 0, score >= t is positive."""
    s = np.asarray(scores, dtype=np.float64)
    squeeze = s.ndim == 1 and len(cal.labels) == 1
    m = _as_score_matrix(s)
    if m.shape[1] != len(cal.labels):
        raise DataError(f"{m.shape[1]} score columns for {len(cal.labels)} labels")
    t = cal.thresholds
    out = np.full(m.shape, Decision.UNCERTAIN, dtype=np.int8)
    if cal.delta == 0.0:
        out[m >= t] = Decision.POSITIVE
        out[m < t] = Decision.NEGATIVE
    else:
        out[m > t + cal.delta] = Decision.POSITIVE
        out[m < t - cal.delta] = Decision.NEGATIVE
    return out[:, 0] if squeeze else out


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    uncertain: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn + self.uncertain

    def as_dict(self) -> dict[str, int]:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn,
            "fn": self.fn, "uncertain": self.uncertain,
        }


def confusion_matrix(decisions: np.ndarray, truth: Sequence[int]) -> ConfusionMatrix:
    """Count decisions against binary truth; uncertain decisions are counted
    in their own bucket regardless of the true class."""
    d = np.asarray(decisions)
    t = np.asarray(truth)
    if d.shape != t.shape or d.ndim != 1:
        raise DataError("decisions and truth must be 1-D and the same length")
    if not np.isin(t, (0, 1)).all():
        raise DataError("truth values must be 0 or 1")
    if not np.isin(d, (0, 1, 2)).all():
        raise DataError("decisions must be Decision codes")
    return ConfusionMatrix(
        tp=int(np.sum((d == Decision.POSITIVE) & (t == 1))),
        fp=int(np.sum((d == Decision.POSITIVE) & (t == 0))),
        tn=int(np.sum((d == Decision.NEGATIVE) & (t == 0))),
        fn=int(np.sum((d == Decision.NEGATIVE) & (t == 1))),
        uncertain=int(np.sum(d == Decision.UNCERTAIN)),
    )
