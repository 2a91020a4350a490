"""Lithotype change detection from measurement-while-drilling telemetry.

A gradient-boosted classifier turns per-depth drilling channels into a
probability of shale; a change detector turns that stream into a lithotype
log. The harness scores both under leave-one-well-out cross-validation.
"""

__version__ = "0.1.0"

from .welldata import (CHANNELS, GRID_STEP, Dataset, DataWarning, Lithotype, MwdSample, WellDataError,
                       WellSeries, bin_to_grid, load_dataset, parse_well_csv, read_well_csv, validate_well,
                       well_to_csv)
from .preprocess import FeatureConfig, FeatureMatrix, derive_features, impute_missing, pool_features, prepare_well
from .gbdt import GbdtConfig, GbdtModel, fit_gbdt, load_model, predict_proba, save_model, train_gbdt
from .detect import (ChangeEvent, DetectorConfig, DetectorKind, Direction, apply_detector, detect_stream,
                     drop_thin_layers)
from .metrics import MetricReport, accuracy_l, accuracy_n, change_detection_report, evaluate_labels, ranking_metrics
from .harness import (CvResult, GridSpec, difficulty_analysis, evaluate_folds, grid_search, leave_one_well_out,
                      predict_folds)
from .synth import SynthConfig, generate_field, generate_well

__all__ = [
    "__version__", "CHANNELS", "GRID_STEP", "Dataset", "DataWarning", "Lithotype", "MwdSample", "WellDataError",
    "WellSeries", "bin_to_grid", "load_dataset", "parse_well_csv", "read_well_csv", "validate_well",
    "well_to_csv", "FeatureConfig", "FeatureMatrix", "derive_features", "impute_missing", "pool_features",
    "prepare_well", "GbdtConfig", "GbdtModel", "fit_gbdt", "load_model", "predict_proba", "save_model",
    "train_gbdt", "ChangeEvent", "DetectorConfig", "DetectorKind", "Direction", "apply_detector",
    "detect_stream", "drop_thin_layers", "MetricReport", "accuracy_l", "accuracy_n",
    "change_detection_report", "evaluate_labels", "ranking_metrics", "CvResult", "GridSpec",
    "difficulty_analysis", "evaluate_folds", "grid_search", "leave_one_well_out", "predict_folds",
    "SynthConfig", "generate_field", "generate_well",
]
