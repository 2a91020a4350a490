"""Leave-one-well-out evaluation, detector grid search and difficulty analysis."""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .detect import DetectorConfig, DetectorKind, apply_detector
from .gbdt import GbdtConfig, TrainingError, fit_gbdt, predict_proba
from .metrics import SCALAR_METRICS, MetricReport, evaluate_labels
from .preprocess import FeatureConfig, FeatureMatrix, pool_features, prepare_well
from .welldata import DataWarning, Dataset, GRID_STEP, label_runs

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


class LeakageError(RuntimeError):
    pass


class SearchError(RuntimeError):
    pass


@dataclass(eq=False)
class FoldPrediction:
    """Hold-out probabilities for one well plus the provenance of its training fold.

    Arrays cover the usable rows of the hold-out well only.
    """

    well_id: str
    train_wells: tuple[str, ...]
    probs: np.ndarray | None
    actual: np.ndarray
    depth: np.ndarray
    density: np.ndarray | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(eq=False)
class CvResult:
    per_well: dict[str, MetricReport]
    aggregate_median: dict[str, float]
    aggregate_mean: dict[str, float]
    aggregate_std: dict[str, float]
    detector: DetectorConfig
    failed: dict[str, str] = field(default_factory=dict)
    audit: dict[str, tuple[str, ...]] = field(default_factory=dict)
    folds: dict[str, FoldPrediction] = field(default_factory=dict, repr=False)
    corrected: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def _fold_job(args) -> FoldPrediction:
    holdout, train, gbdt_cfg = args
    X, y, groups = pool_features(train)
    train_wells = tuple(sorted(set(groups.tolist())))
    try:
        model = fit_gbdt(X, y, gbdt_cfg, holdout.feature_names)
    except TrainingError as exc:
        return FoldPrediction(holdout.well_id, train_wells, None, holdout.labels, holdout.depth,
                              None, error=str(exc))
    probs = predict_proba(model, holdout.X) if len(holdout) else np.empty(0)
    return FoldPrediction(holdout.well_id, train_wells, probs, holdout.labels, holdout.depth, None)


def predict_folds(dataset: Dataset, classifier_cfg: GbdtConfig | None = None,
                  feature_cfg: FeatureConfig | None = None, workers: int = 1
                  ) -> dict[str, FoldPrediction]:
    """Train one classifier per held-out well and predict that well.

    Returned in well-id order. Every training row carries its well id, and the
    fold is audited against it before the result is accepted.
    """
    if len(dataset) < 2:
        raise EvaluationError("need >= 2 wells for leave-one-well-out evaluation")
    classifier_cfg = classifier_cfg or GbdtConfig()
    mats: dict[str, FeatureMatrix] = {w.well_id: prepare_well(w, feature_cfg) for w in dataset}
    ids = sorted(mats)
    jobs = [(mats[i], [mats[j] for j in ids if j != i], classifier_cfg) for i in ids]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fold_job, jobs))
    else:
        results = [_fold_job(job) for job in jobs]
    folds = {}
    for fold in results:
        if fold.well_id in fold.train_wells:
            raise LeakageError(f"hold-out well {fold.well_id} found in its own training fold")
        src = dataset.get(fold.well_id)
        if src.density is not None:
            fold.density = src.density[mats[fold.well_id].index]
        if fold.failed:
            warnings.warn(f"fold {fold.well_id} failed: {fold.error}", DataWarning, stacklevel=2)
        folds[fold.well_id] = fold
    return folds


def _aggregate(values: Iterable[float], how: str) -> float:
    arr = np.asarray([v for v in values if v is not None and not math.isnan(v)], dtype=np.float64)
    if arr.size == 0:
        return math.nan
    if how == "median":
        return float(np.median(arr))
    if how == "mean":
        return float(np.mean(arr))
    return float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0


def evaluate_folds(folds: dict[str, FoldPrediction], detector_cfg: DetectorConfig,
                   step: float = GRID_STEP) -> CvResult:
    """Run ``detector_cfg`` on every fold's probabilities and aggregate the metrics."""
    per_well: dict[str, MetricReport] = {}
    corrected: dict[str, np.ndarray] = {}
    failed = {}
    for wid in sorted(folds):
        fold = folds[wid]
        if fold.failed:
            failed[wid] = fold.error
            continue
        if fold.probs.size == 0:
            failed[wid] = "no usable rows"
            continue
        _, labels, _ = apply_detector(fold.probs, detector_cfg, start_depth=float(fold.depth[0]), step=step)
        corrected[wid] = labels
        per_well[wid] = evaluate_labels(fold.actual, fold.probs, labels, step, detector_cfg.l0)
    if not per_well:
        raise EvaluationError("every fold failed")
    reports = list(per_well.values())
    agg = {how: {k: _aggregate((getattr(r, k) for r in reports), how) for k in SCALAR_METRICS}
           for how in ("median", "mean", "std")}
    return CvResult(
        per_well=per_well,
        aggregate_median=agg["median"],
        aggregate_mean=agg["mean"],
        aggregate_std=agg["std"],
        detector=detector_cfg,
        failed=failed,
        audit={wid: f.train_wells for wid, f in folds.items()},
        folds=folds,
        corrected=corrected,
    )


def leave_one_well_out(dataset: Dataset, classifier_cfg: GbdtConfig | None = None,
                       detector_cfg: DetectorConfig | None = None, *,
                       feature_cfg: FeatureConfig | None = None, workers: int = 1) -> CvResult:
    folds = predict_folds(dataset, classifier_cfg, feature_cfg, workers)
    return evaluate_folds(folds, detector_cfg or DetectorConfig())


@dataclass(frozen=True)
class GridSpec:
    """Candidate detector hyperparameters; unused lists are ignored for ``kind``."""

    kind: DetectorKind
    thresholds_to_shale: tuple[float, ...] = ()
    thresholds_to_sand: tuple[float, ...] = ()
    prior_p: tuple[float, ...] = (0.1,)
    thin_w: tuple[int, ...] = (15,)
    max_combinations: int = 10_000

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DetectorKind(self.kind))
        if self.kind in (DetectorKind.CUSUM, DetectorKind.SHIRYAEV_ROBERTS, DetectorKind.POSTERIOR):
            if not self.thresholds_to_shale or not self.thresholds_to_sand:
                raise ValueError("threshold candidate lists must be non-empty")
        if self.kind is DetectorKind.POSTERIOR and not self.prior_p:
            raise ValueError("prior_p candidates must be non-empty")
        if self.kind is DetectorKind.THIN_LAYER and not self.thin_w:
            raise ValueError("thin_w candidates must be non-empty")
        n = len(self.configs())
        if n > self.max_combinations:
            raise ValueError(f"grid has {n} cells, above the cap of {self.max_combinations}")

    def configs(self) -> list[DetectorConfig]:
        k = self.kind
        if k is DetectorKind.THIN_LAYER:
            return [DetectorConfig(k, thin_w=w) for w in self.thin_w]
        if k is DetectorKind.NONE:
            return [DetectorConfig(k)]
        priors = self.prior_p if k is DetectorKind.POSTERIOR else (DetectorConfig().prior_p,)
        return [DetectorConfig(k, threshold_to_shale=a, threshold_to_sand=b, prior_p=p)
                for a, b, p in itertools.product(self.thresholds_to_shale, self.thresholds_to_sand, priors)]


@dataclass
class LeaderboardRow:
    rank: int
    detector: DetectorConfig
    classifier: GbdtConfig
    acc_n_median: float
    fp_median: float
    delay_mean: float
    result: CvResult = field(repr=False)

    def params(self) -> dict:
        return {"kind": self.detector.kind.value, **self.detector.params()}


def _rank_key(row: LeaderboardRow):
    def nan_last(v: float, sign: float) -> tuple[int, float]:
        return (1, 0.0) if math.isnan(v) else (0, sign * v)
    return (nan_last(row.acc_n_median, -1.0), nan_last(row.fp_median, 1.0), nan_last(row.delay_mean, 1.0))


def grid_search(dataset: Dataset, grid: GridSpec, classifier_cfg: GbdtConfig | None = None, *,
                classifier_grid: Sequence[GbdtConfig] | None = None,
                feature_cfg: FeatureConfig | None = None, workers: int = 1,
                folds: dict[str, FoldPrediction] | None = None
                ) -> tuple[DetectorConfig, list[LeaderboardRow]]:
    """Evaluate every grid cell by leave-one-well-out and rank by median Accuracy N.

    Ties go to the lower median false-positive count, then the lower mean
    delay. The classifier stays fixed unless ``classifier_grid`` is given; fold
    predictions are computed once per classifier and shared by all cells.
    """
    classifiers = list(classifier_grid) if classifier_grid else [classifier_cfg or GbdtConfig()]
    rows: list[LeaderboardRow] = []
    for gcfg in classifiers:
        fold_preds = folds if folds is not None and len(classifiers) == 1 else \
            predict_folds(dataset, gcfg, feature_cfg, workers)
        for dcfg in grid.configs():
            try:
                res = evaluate_folds(fold_preds, dcfg)
            except EvaluationError as exc:
                log.warning("grid cell %s failed: %s", dcfg.params(), exc)
                continue
            rows.append(LeaderboardRow(0, dcfg, gcfg, res.aggregate_median["accuracy_n"],
                                       res.aggregate_median["fp_alarms"],
                                       res.aggregate_mean["mean_delay_m"], res))
    if not rows or all(math.isnan(r.acc_n_median) for r in rows):
        raise SearchError("no grid cell produced a defined median Accuracy N")
    rows.sort(key=_rank_key)
    for i, r in enumerate(rows, 1):
        r.rank = i
    return rows[0].detector, rows


@dataclass
class DifficultyResult:
    """Absolute density differences across actual changes, split by detection."""

    identified: np.ndarray
    unidentified: np.ndarray
    edges: np.ndarray
    identified_counts: np.ndarray
    unidentified_counts: np.ndarray

    def rows(self) -> list[tuple[float, float, int, int]]:
        return [(float(lo), float(hi), int(a), int(b)) for lo, hi, a, b in
                zip(self.edges[:-1], self.edges[1:], self.identified_counts, self.unidentified_counts)]


def density_differences(actual: np.ndarray, density: np.ndarray) -> dict[int, float]:
    """``|mean density above − mean density below|`` for each actual change index."""
    runs = label_runs(actual)
    out = {}
    for (s0, e0, _), (s1, e1, _) in zip(runs, runs[1:]):
        above, below = density[s0:e0], density[s1:e1]
        if np.isnan(above).all() or np.isnan(below).all():
            continue
        out[s1] = abs(float(np.nanmean(above)) - float(np.nanmean(below)))
    return out


def difficulty_analysis(dataset: Dataset, cv: CvResult, bins: int = 10) -> DifficultyResult | None:
    """Histogram density contrasts of identified vs unidentified changes.

    A change is identified when it was matched within the 20 m window.
    Returns ``None`` (with a :class:`DataWarning`) when no well has density.
    """
    identified, unidentified = [], []
    for wid, report in cv.per_well.items():
        fold = cv.folds.get(wid)
        if fold is None or fold.density is None:
            continue
        diffs = density_differences(fold.actual, fold.density)
        for m in report.matches:
            if m.actual_index in diffs:
                (identified if m.predicted_index is not None else unidentified).append(diffs[m.actual_index])
    if not identified and not unidentified:
        warnings.warn("no density channel available; difficulty analysis skipped", DataWarning, stacklevel=2)
        return None
    ident = np.asarray(identified)
    unid = np.asarray(unidentified)
    top = float(max(np.max(ident, initial=0.0), np.max(unid, initial=0.0)))
    edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
    return DifficultyResult(ident, unid, edges,
                            np.histogram(ident, edges)[0], np.histogram(unid, edges)[0])
