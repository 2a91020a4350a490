"""Evaluation metrics for lithotype labeling and change detection.

Undefined values (no surviving samples, no actual changes, a single class)
are reported as ``nan`` so aggregation can skip them explicitly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from .detect import ChangeEvent, EventSource, change_points
from .welldata import GRID_STEP

UNDEFINED = math.nan
NEIGHBORHOOD_M = 1.5
MAX_DELAY_M = 20.0
ALARM_WINDOW_M = 3.0

__all__ = [
    "UNDEFINED", "ChangeMatch", "MetricReport", "ChangeReport", "RankingMetrics",
    "change_points", "accuracy", "accuracy_l", "accuracy_n", "boundary_mask",
    "match_changes", "change_detection_report", "ranking_metrics", "evaluate_labels",
]


def _samples(meters: float, step: float) -> int:
    return int(round(meters / step))


def _pair(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.int8)
    p = np.asarray(predicted, dtype=np.int8)
    if a.shape != p.shape or a.ndim != 1:
        raise ValueError("actual and predicted must be 1-D and of equal length")
    return a, p


def boundary_mask(actual, window_m: float = NEIGHBORHOOD_M, step: float = GRID_STEP) -> np.ndarray:
    """True for samples within ``window_m`` of an actual layer boundary.

    A boundary sits between samples ``t-1`` and ``t``; the ``k = window/step``
    samples on each side of it are masked.
    """
    a = np.asarray(actual)
    k = _samples(window_m, step)
    mask = np.zeros(a.size, dtype=bool)
    for t in np.flatnonzero(a[1:] != a[:-1]) + 1:
        mask[max(0, t - k):t + k] = True
    return mask


def accuracy(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    return float(np.mean(a == p)) if a.size else UNDEFINED


def accuracy_l(actual, predicted, window_m: float = NEIGHBORHOOD_M, step: float = GRID_STEP) -> float:
    """Pointwise accuracy outside the neighborhoods of actual boundaries."""
    a, p = _pair(actual, predicted)
    keep = ~boundary_mask(a, window_m, step)
    if not keep.any():
        return UNDEFINED
    return float(np.mean(a[keep] == p[keep]))


def accuracy_n(actual, predicted, window_m: float = NEIGHBORHOOD_M, step: float = GRID_STEP) -> float:
    """Share of correctly labeled intervals.

    Samples near actual boundaries are dropped; the rest is cut wherever the
    actual or the predicted label changes, or where a dropped stretch
    interrupts it. Each piece has a constant actual and predicted label and
    counts as correct when the two agree.
    """
    a, p = _pair(actual, predicted)
    keep = np.flatnonzero(~boundary_mask(a, window_m, step))
    if keep.size == 0:
        return UNDEFINED
    ka, kp = a[keep], p[keep]
    new = np.ones(keep.size, dtype=bool)
    new[1:] = (np.diff(keep) > 1) | (ka[1:] != ka[:-1]) | (kp[1:] != kp[:-1])
    starts = np.flatnonzero(new)
    return float(np.mean(ka[starts] == kp[starts]))


class ChangeMatch(NamedTuple):
    actual_index: int
    predicted_index: int | None
    delay_m: float | None


def match_changes(actual_events: Sequence[ChangeEvent], predicted_events: Sequence[ChangeEvent],
                  max_window_m: float = MAX_DELAY_M, step: float = GRID_STEP) -> list[ChangeMatch]:
    """Pair each actual change with the earliest unused prediction of the same direction.

    Actual changes are visited in depth order; a prediction qualifies when it
    lies 0 to ``max_window_m`` meters below the actual change.
    """
    window = _samples(max_window_m, step)
    pending: dict = {}
    for ev in sorted(predicted_events, key=lambda e: e.index):
        pending.setdefault(ev.direction, []).append(ev.index)
    cursor = {d: 0 for d in pending}
    out = []
    for ev in sorted(actual_events, key=lambda e: e.index):
        cands = pending.get(ev.direction, [])
        i = cursor.get(ev.direction, 0)
        # earlier predictions can never serve a later actual change
        while i < len(cands) and cands[i] < ev.index:
            i += 1
        if i < len(cands) and cands[i] - ev.index <= window:
            out.append(ChangeMatch(ev.index, cands[i], round((cands[i] - ev.index) * step, 9)))
            i += 1
        else:
            out.append(ChangeMatch(ev.index, None, None))
        if ev.direction in cursor:
            cursor[ev.direction] = i
    return out


class ChangeReport(NamedTuple):
    mean_delay_m: float
    pct_within_20m: float
    tp_alarms: int
    fp_alarms: int
    matches: list[ChangeMatch]


def change_detection_report(actual, predicted_labels, step: float = GRID_STEP,
                            max_window_m: float = MAX_DELAY_M,
                            alarm_window_m: float = ALARM_WINDOW_M) -> ChangeReport:
    """Delay, detection rate and alarm counts for a predicted labeling.

    True positives are actual changes matched within ``alarm_window_m``; false
    positives are predicted changes with no actual change of the same
    direction in the preceding ``alarm_window_m``.
    """
    a, p = _pair(actual, predicted_labels)
    act = change_points(a, step=step, source=EventSource.ACTUAL)
    pred = change_points(p, step=step)
    matches = match_changes(act, pred, max_window_m, step)
    delays = [m.delay_m for m in matches if m.delay_m is not None]
    if act:
        mean_delay = float(np.mean(delays)) if delays else UNDEFINED
        pct = len(delays) / len(act)
    else:
        mean_delay = pct = UNDEFINED
    alarm = _samples(alarm_window_m, step)
    tp = sum(1 for m in matches if m.predicted_index is not None
             and m.predicted_index - m.actual_index <= alarm)
    by_dir: dict = {}
    for ev in act:
        by_dir.setdefault(ev.direction, []).append(ev.index)
    fp = 0
    for ev in pred:
        idx = np.asarray(by_dir.get(ev.direction, []), dtype=np.int64)
        if not np.any((idx <= ev.index) & (ev.index - idx <= alarm)):
            fp += 1
    return ChangeReport(mean_delay, pct, tp, fp, matches)


class RankingMetrics(NamedTuple):
    roc_auc: float
    pr_auc: float
    precision: float
    recall: float
    accuracy: float


def ranking_metrics(actual, probs, threshold: float = 0.5) -> RankingMetrics:
    """Threshold-free and thresholded classification scores, shale positive.

    ROC AUC is the Mann-Whitney statistic with half credit for ties; PR AUC is
    average precision (the step integral of the precision-recall curve).
    """
    y = np.asarray(actual).astype(bool)
    s = np.asarray(probs, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError("actual and probs must have equal length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos and n_neg:
        ranks = rankdata(s)
        roc = (ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
        order = np.argsort(-s, kind="stable")
        s_sorted, y_sorted = s[order], y[order]
        # evaluate only where the score changes so tied scores act as one threshold
        last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), y.size - 1]
        tps = np.cumsum(y_sorted)[last]
        prec = tps / (last + 1)
        rec = tps / n_pos
        pr = float(np.sum(np.diff(np.r_[0.0, rec]) * prec))
    else:
        roc = pr = UNDEFINED
    pred = s >= threshold
    n_pred = int(pred.sum())
    tp = int((pred & y).sum())
    precision = tp / n_pred if n_pred else UNDEFINED
    recall = tp / n_pos if n_pos else UNDEFINED
    acc = float(np.mean(pred == y)) if y.size else UNDEFINED
    return RankingMetrics(float(roc), pr, precision, recall, acc)


SCALAR_METRICS = ("accuracy", "accuracy_l", "accuracy_n", "roc_auc", "pr_auc", "precision",
                  "recall", "mean_delay_m", "pct_within_20m", "tp_alarms", "fp_alarms")


@dataclass
class MetricReport:
    accuracy: float
    accuracy_l: float
    accuracy_n: float
    roc_auc: float
    pr_auc: float
    precision: float
    recall: float
    mean_delay_m: float
    pct_within_20m: float
    tp_alarms: int
    fp_alarms: int
    matches: list[ChangeMatch] = field(default_factory=list, repr=False)

    def scalars(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in SCALAR_METRICS}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["matches"] = [m._asdict() for m in self.matches]
        return d


def evaluate_labels(actual, probs, corrected, step: float = GRID_STEP,
                    threshold: float = 0.5) -> MetricReport:
    """Full per-well report.

    AUCs come from ``probs``; every other metric scores the ``corrected``
    labels (for the raw classifier these are the thresholded probabilities).
    """
    a, c = _pair(actual, corrected)
    rank = ranking_metrics(a, probs, threshold)
    labeled = ranking_metrics(a, c.astype(np.float64), 0.5)
    change = change_detection_report(a, c, step)
    return MetricReport(
        accuracy=accuracy(a, c),
        accuracy_l=accuracy_l(a, c, step=step),
        accuracy_n=accuracy_n(a, c, step=step),
        roc_auc=rank.roc_auc,
        pr_auc=rank.pr_auc,
        precision=labeled.precision,
        recall=labeled.recall,
        mean_delay_m=change.mean_delay_m,
        pct_within_20m=change.pct_within_20m,
        tp_alarms=change.tp_alarms,
        fp_alarms=change.fp_alarms,
        matches=change.matches,
    )
