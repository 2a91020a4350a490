"""Command-line entry point.

Exit status: 0 success, 1 usage error, 2 data/validation error, 3 internal
failure. Every run writes a ``manifest.json`` (or ``<output>.manifest.json``
for single-file outputs) recording the full argument vector, the resolved
configuration and library versions; ``drillwatch replay`` re-runs it.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import platform
import sys
import warnings
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .detect import DetectorConfig, DetectorKind, apply_detector
from .gbdt import GbdtConfig, ModelFormatError, ShapeError, TrainingError, fit_gbdt, load_model, predict_proba, save_model
from .harness import (EvaluationError, GridSpec, SearchError, density_differences, difficulty_analysis,
                      grid_search, predict_folds, evaluate_folds)
from .metrics import SCALAR_METRICS
from .preprocess import FeatureConfig, FeatureError, derive_features, impute_missing, pool_features, prepare_well
from .synth import SynthConfig, SynthError, generate_well
from .welldata import (DataWarning, Dataset, GRID_STEP, Lithotype, WellDataError, bin_to_grid, load_dataset,
                       read_well_csv, well_to_csv)

log = logging.getLogger("drillwatch")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DATA_ERRORS = (WellDataError, FeatureError, TrainingError, ShapeError, ModelFormatError,
               EvaluationError, SearchError, SynthError)

DEFAULT_GRIDS = {
    DetectorKind.THIN_LAYER: {"thin_w": (5, 10, 15, 20, 30)},
    DetectorKind.CUSUM: {"thresholds_to_shale": (10.0, 25.0, 50.0), "thresholds_to_sand": (10.0, 25.0, 50.0)},
    DetectorKind.SHIRYAEV_ROBERTS: {"thresholds_to_shale": (1e6, 1e9, 1158e9),
                                    "thresholds_to_sand": (1e6, 1e9, 1158e9)},
    DetectorKind.POSTERIOR: {"thresholds_to_shale": (1e4, 8e5, 1e8), "thresholds_to_sand": (1e4, 7e5, 1e8),
                             "prior_p": (0.01, 0.1, 0.3)},
    DetectorKind.NONE: {},
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_io(p, output_help="output directory"):
    p.add_argument("-i", "--input", nargs="+", required=True, help="CSV files or directories")
    p.add_argument("-o", "--output", required=True, help=output_help)


def _add_classifier(p):
    g = p.add_argument_group("classifier")
    g.add_argument("--trees", type=int, default=200)
    g.add_argument("--depth", type=int, default=3)
    g.add_argument("--lr", type=float, default=0.05)
    g.add_argument("--min-leaf", type=int, default=20)
    g.add_argument("--subsample-rows", type=float, default=1.0)
    g.add_argument("--subsample-features", type=float, default=1.0)
    g.add_argument("--balance-classes", action="store_true")
    g.add_argument("--no-apr", action="store_true", help="drop the adjusted penetration rate feature")
    g.add_argument("--no-sed", action="store_true", help="drop the specific energy feature")


def _add_detector(p):
    g = p.add_argument_group("detector")
    g.add_argument("--detector", choices=[k.value for k in DetectorKind], default="ctl")
    g.add_argument("--threshold-to-shale", type=float)
    g.add_argument("--threshold-to-sand", type=float)
    g.add_argument("--prior-p", type=float, default=0.1)
    g.add_argument("--thin-w", type=int, default=15)
    g.add_argument("--l0", type=float, default=0.5)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel folds (default: $DRILLWATCH_WORKERS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drillwatch", description="Lithotype change detection from MWD telemetry.")
    parser.add_argument("--version", action="version", version=f"drillwatch {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic field")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--wells", type=int, default=20)
    p.add_argument("--length", type=float, default=800.0, help="well length in meters")
    p.add_argument("--shale-fraction", type=float, default=0.165)
    p.add_argument("--missing-rate", type=float, default=0.01)
    _add_common(p)

    p = sub.add_parser("preprocess", help="grid, impute and write feature CSVs")
    _add_io(p)
    p.add_argument("--no-apr", action="store_true")
    p.add_argument("--no-sed", action="store_true")

    p = sub.add_parser("train", help="train the classifier on all input wells")
    _add_io(p, "model file")
    _add_classifier(p)
    _add_common(p)

    p = sub.add_parser("detect", help="run a detector on one well")
    p.add_argument("-i", "--input", required=True, help="probability CSV (depth,prob) or well CSV with --model")
    p.add_argument("-o", "--output", required=True, help="output CSV")
    p.add_argument("--model", help="model file; probabilities are computed inline from a well CSV")
    _add_detector(p)

    p = sub.add_parser("evaluate", help="leave-one-well-out evaluation")
    _add_io(p)
    _add_classifier(p)
    _add_detector(p)
    _add_common(p)
    p.add_argument("--bins", type=int, default=10, help="difficulty histogram bins")

    p = sub.add_parser("grid-search", help="tune detector hyperparameters on median Accuracy N")
    _add_io(p)
    _add_classifier(p)
    _add_common(p)
    p.add_argument("--detector", choices=[k.value for k in DetectorKind], default="ctl")
    p.add_argument("--grid-threshold-to-shale", type=_floats)
    p.add_argument("--grid-threshold-to-sand", type=_floats)
    p.add_argument("--grid-prior-p", type=_floats)
    p.add_argument("--grid-thin-w", type=_ints)
    p.add_argument("--max-combinations", type=int, default=10_000)

    p = sub.add_parser("report", help="plot-ready tables from evaluate or detect outputs")
    p.add_argument("-i", "--input", required=True, help="evaluate output directory or detect CSV")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--bins", type=int, default=10)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", help="write to a different output location")
    return parser


def _workers(args) -> int:
    if args.workers is not None:
        n = args.workers
    else:
        env = os.environ.get("DRILLWATCH_WORKERS", "1")
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"DRILLWATCH_WORKERS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("worker count must be >= 1")
    return n


def _existing(paths: Sequence[str]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if not p.exists():
            raise UsageError(f"input path does not exist: {p}")
        out.append(p)
    return out


def _classifier_cfg(args) -> GbdtConfig:
    try:
        return GbdtConfig(n_trees=args.trees, max_depth=args.depth, learning_rate=args.lr,
                          subsample_rows=args.subsample_rows, subsample_features=args.subsample_features,
                          min_leaf=args.min_leaf, balance_classes=args.balance_classes, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _feature_cfg(args) -> FeatureConfig:
    return FeatureConfig(use_apr=not args.no_apr, use_sed=not args.no_sed)


def _detector_cfg(args) -> DetectorConfig:
    try:
        return DetectorConfig(DetectorKind(args.detector), threshold_to_shale=args.threshold_to_shale,
                              threshold_to_sand=args.threshold_to_sand, prior_p=args.prior_p,
                              thin_w=args.thin_w, l0=args.l0)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (DetectorKind, Lithotype)):
        return obj.value
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _versions() -> dict:
    import numba
    import scipy
    return {"drillwatch": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def write_manifest(path: Path, argv: Sequence[str], command: str, config: dict, seed: int | None) -> None:
    doc = {"tool": "drillwatch", "command": command, "argv": list(argv), "seed": seed,
           "config": _jsonable(config), "versions": _versions()}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _load(paths: Sequence[str]) -> Dataset:
    return load_dataset(_existing(paths))


# --- subcommands ---------------------------------------------------------


def cmd_synth(args, argv) -> None:
    cfg = SynthConfig(n_wells=args.wells, well_length_m=args.length, shale_fraction_target=args.shale_fraction,
                      missing_rate=args.missing_rate, seed=args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(cfg.n_wells):
        well = generate_well(cfg, i)
        (out / f"{well.well_id}.csv").write_text(well_to_csv(well), encoding="utf-8")
        ids.append(well.well_id)
    write_manifest(out / "manifest.json", argv, "synth", {"synth": cfg.to_dict(), "wells": ids}, args.seed)


def cmd_preprocess(args, argv) -> None:
    dataset = _load(args.input)
    fcfg = _feature_cfg(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    coverage = {}
    for well in dataset:
        imputed, cov = impute_missing(well)
        coverage[well.well_id] = cov
        fm = derive_features(imputed, fcfg)
        extra = {}
        for name in ("apr", "sed"):
            if name in fm.feature_names:
                col = np.full(len(imputed), np.nan)
                col[fm.index] = fm.X[:, fm.feature_names.index(name)]
                extra[name] = col
        (out / f"{well.well_id}.csv").write_text(well_to_csv(imputed, extra), encoding="utf-8")
    write_manifest(out / "manifest.json", argv, "preprocess",
                   {"features": asdict(fcfg), "coverage": coverage}, None)


def cmd_train(args, argv) -> None:
    dataset = _load(args.input)
    gcfg = _classifier_cfg(args)
    fcfg = _feature_cfg(args)
    mats = [prepare_well(w, fcfg) for w in dataset]
    X, y, _ = pool_features(mats)
    model = fit_gbdt(X, y, gcfg, fcfg.feature_names)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(save_model(model), encoding="utf-8")
    write_manifest(out.with_name(out.name + ".manifest.json"), argv, "train",
                   {"classifier": asdict(gcfg), "features": asdict(fcfg), "wells": list(dataset.ids),
                    "final_train_loss": model.train_loss[-1]}, args.seed)


def _read_probabilities(path: Path) -> tuple[np.ndarray, np.ndarray]:
    reader = csv.reader(io.StringIO(path.read_text(encoding="utf-8")))
    header = [h.strip().lower() for h in next(reader, [])]
    if "depth" not in header or "prob" not in header:
        raise DataError(f"{path}: probability CSV needs depth and prob columns")
    di, pi = header.index("depth"), header.index("prob")
    depth, prob = [], []
    for row in reader:
        if not row:
            continue
        try:
            d, p = float(row[di]), float(row[pi])
        except (ValueError, IndexError):
            raise DataError(f"{path}: line {reader.line_num}: bad depth/prob") from None
        if not 0.0 <= p <= 1.0:
            raise DataError(f"{path}: line {reader.line_num}: probability {p} outside [0, 1]")
        depth.append(d)
        prob.append(p)
    if not prob:
        raise DataError(f"{path}: no rows")
    return np.asarray(depth), np.asarray(prob)


def cmd_detect(args, argv) -> None:
    src = _existing([args.input])[0]
    dcfg = _detector_cfg(args)
    truth = None
    if args.model:
        model_path = _existing([args.model])[0]
        model = load_model(model_path.read_text(encoding="utf-8"))
        well = bin_to_grid(read_well_csv(src))
        fm = prepare_well(well, FeatureConfig(use_apr="apr" in model.feature_names,
                                              use_sed="sed" in model.feature_names))
        if fm.feature_names != model.feature_names:
            raise DataError("model feature layout does not match the well's features")
        depth, probs, truth = fm.depth, predict_proba(model, fm.X), fm.labels
        if probs.size == 0:
            raise DataError(f"{src}: no usable rows")
    else:
        depth, probs = _read_probabilities(src)
    raw, corrected, events = apply_detector(probs, dcfg, start_depth=float(depth[0]))
    marks = {e.index: e.direction.value for e in events}
    header = ["depth", "prob", "raw_label", "corrected_label", "event"]
    rows = []
    for t in range(probs.size):
        row = [float(depth[t]), float(probs[t]), Lithotype(int(raw[t])).token,
               Lithotype(int(corrected[t])).token, marks.get(t, "")]
        if truth is not None:
            row.append(Lithotype(int(truth[t])).token)
        rows.append(row)
    if truth is not None:
        header.append("true_label")
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, header, rows)
    write_manifest(out.with_name(out.name + ".manifest.json"), argv, "detect",
                   {"detector": asdict(dcfg), "events": len(events)}, None)


def _metrics_rows(result):
    rows = [[wid, *(r.scalars()[k] for k in SCALAR_METRICS)] for wid, r in result.per_well.items()]
    for how, agg in (("median", result.aggregate_median), ("mean", result.aggregate_mean),
                     ("std", result.aggregate_std)):
        rows.append([f"aggregate:{how}", *(agg[k] for k in SCALAR_METRICS)])
    return rows


def cmd_evaluate(args, argv) -> None:
    dataset = _load(args.input)
    if len(dataset) < 2:
        raise DataError(f"need ≥ 2 wells for leave-one-well-out evaluation, got {len(dataset)}")
    gcfg, fcfg, dcfg = _classifier_cfg(args), _feature_cfg(args), _detector_cfg(args)
    folds = predict_folds(dataset, gcfg, fcfg, _workers(args))
    result = evaluate_folds(folds, dcfg)
    out = Path(args.output)
    (out / "predictions").mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics.csv", ["well_id", *SCALAR_METRICS], _metrics_rows(result))
    with open(out / "reports.jsonl", "w", encoding="utf-8") as fh:
        for wid, rep in result.per_well.items():
            fh.write(json.dumps(_jsonable({"well_id": wid, **rep.to_dict()}), sort_keys=True) + "\n")
    for wid, fold in result.folds.items():
        if wid not in result.corrected:
            continue
        raw, corrected, events = apply_detector(fold.probs, dcfg, start_depth=float(fold.depth[0]))
        marks = {e.index: e.direction.value for e in events}
        _write_csv(out / "predictions" / f"{wid}.csv",
                   ["depth", "true_label", "prob", "raw_label", "corrected_label", "event"],
                   ([float(fold.depth[t]), Lithotype(int(fold.actual[t])).token, float(fold.probs[t]),
                     Lithotype(int(raw[t])).token, Lithotype(int(corrected[t])).token, marks.get(t, "")]
                    for t in range(fold.probs.size)))
    change_rows = []
    for wid, rep in result.per_well.items():
        fold = result.folds[wid]
        if fold.density is None:
            continue
        diffs = density_differences(fold.actual, fold.density)
        for m in rep.matches:
            if m.actual_index in diffs:
                change_rows.append([wid, m.actual_index, float(fold.depth[m.actual_index]),
                                    diffs[m.actual_index], int(m.predicted_index is not None)])
    if change_rows:
        _write_csv(out / "changes.csv", ["well_id", "index", "depth", "density_diff", "identified"], change_rows)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        diff = difficulty_analysis(dataset, result, bins=args.bins)
    if diff is not None:
        _write_csv(out / "difficulty.csv", ["bin_lo", "bin_hi", "identified_count", "unidentified_count"],
                   diff.rows())
    else:
        print("notice: no density channel; difficulty histogram not written", file=sys.stderr)
    for wid, err in result.failed.items():
        print(f"notice: fold {wid} failed: {err}", file=sys.stderr)
    write_manifest(out / "manifest.json", argv, "evaluate",
                   {"classifier": asdict(gcfg), "features": asdict(fcfg), "detector": asdict(dcfg),
                    "wells": list(dataset.ids), "audit": result.audit, "failed": result.failed}, args.seed)


def cmd_grid_search(args, argv) -> None:
    dataset = _load(args.input)
    if len(dataset) < 2:
        raise DataError(f"need ≥ 2 wells for leave-one-well-out evaluation, got {len(dataset)}")
    kind = DetectorKind(args.detector)
    spec = dict(DEFAULT_GRIDS[kind])
    for key, attr in (("thresholds_to_shale", "grid_threshold_to_shale"),
                      ("thresholds_to_sand", "grid_threshold_to_sand"),
                      ("prior_p", "grid_prior_p"), ("thin_w", "grid_thin_w")):
        if getattr(args, attr):
            spec[key] = getattr(args, attr)
    try:
        grid = GridSpec(kind, max_combinations=args.max_combinations, **spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    gcfg, fcfg = _classifier_cfg(args), _feature_cfg(args)
    best, board = grid_search(dataset, grid, gcfg, feature_cfg=fcfg, workers=_workers(args))
    param_names = sorted({k for row in board for k in row.detector.params()})
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "leaderboard.csv", ["rank", "kind", *param_names, "acc_n_median", "fp_median", "delay_mean"],
               ([row.rank, kind.value, *(row.detector.params().get(k) for k in param_names),
                 row.acc_n_median, row.fp_median, row.delay_mean] for row in board))
    write_manifest(out / "manifest.json", argv, "grid-search",
                   {"classifier": asdict(gcfg), "features": asdict(fcfg), "grid": asdict(grid),
                    "best": asdict(best), "wells": list(dataset.ids)}, args.seed)


def _read_table(path: Path) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))))


def _three_track(rows: list[dict[str, str]], path: Path) -> None:
    need = {"depth", "prob", "raw_label", "corrected_label"}
    if not rows or not need <= set(rows[0]):
        raise DataError(f"{path}: not a detect/evaluate prediction table")
    _write_csv(path, ["depth", "true_label", "prob", "raw_label", "corrected_label"],
               ([r["depth"], r.get("true_label", ""), r["prob"], r["raw_label"], r["corrected_label"]]
                for r in rows))


def cmd_report(args, argv) -> None:
    src = _existing([args.input])[0]
    out = Path(args.output)
    if src.is_file():
        rows = _read_table(src)
        out.mkdir(parents=True, exist_ok=True)
        _three_track(rows, out / f"{src.stem}_tracks.csv")
        print("notice: single detect output; no difficulty histogram", file=sys.stderr)
    else:
        pred_dir = src / "predictions"
        files = sorted(pred_dir.glob("*.csv")) if pred_dir.is_dir() else []
        if not files:
            raise DataError(f"{src}: no evaluate predictions found (run evaluate first)")
        (out / "tracks").mkdir(parents=True, exist_ok=True)
        for f in files:
            _three_track(_read_table(f), out / "tracks" / f.name)
        changes = src / "changes.csv"
        if changes.exists():
            table = _read_table(changes)
            diffs = np.array([float(r["density_diff"]) for r in table])
            ident = np.array([r["identified"] == "1" for r in table])
            top = float(diffs.max()) if diffs.size and diffs.max() > 0 else 1.0
            edges = np.linspace(0.0, top, args.bins + 1)
            a = np.histogram(diffs[ident], edges)[0]
            b = np.histogram(diffs[~ident], edges)[0]
            _write_csv(out / "difficulty_histogram.csv",
                       ["bin_lo", "bin_hi", "identified_count", "unidentified_count"],
                       zip(edges[:-1].tolist(), edges[1:].tolist(), a.tolist(), b.tolist()))
        else:
            print("notice: evaluation has no density channel; histogram not written", file=sys.stderr)
    write_manifest(out / "manifest.json", argv, "report", {"input": str(src), "bins": args.bins}, None)


def cmd_replay(args, argv) -> int:
    path = _existing([args.manifest])[0]
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        recorded = list(doc["argv"])
    except (ValueError, KeyError, TypeError):
        raise DataError(f"{path}: not a drillwatch manifest") from None
    if args.output:
        for flag in ("-o", "--output"):
            if flag in recorded:
                recorded[recorded.index(flag) + 1] = args.output
    return run(recorded)


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "detect": cmd_detect,
            "evaluate": cmd_evaluate, "grid-search": cmd_grid_search, "report": cmd_report}


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "replay":
            return cmd_replay(args, argv)
        with warnings.catch_warnings():
            warnings.simplefilter("default", DataWarning)
            COMMANDS[args.command](args, argv)
        return EXIT_OK
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (DataError, *DATA_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run())
