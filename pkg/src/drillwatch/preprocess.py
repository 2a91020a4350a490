"""Missing-value imputation and model feature derivation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .welldata import CHANNELS, DataWarning, Dataset, WellSeries, label_runs

# 215.9 mm (8 1/2") bit
DEFAULT_BOREHOLE_AREA = math.pi * 0.2159**2 / 4
CLAMP_EPS = 1e-6


class FeatureError(ValueError):
    pass


def impute_missing(w: WellSeries) -> tuple[WellSeries, float]:
    """Fill missing channel cells lithotype-interval by interval.

    Within each maximal constant-lithotype interval a missing cell takes the
    mean of the interval's known values for that channel. When the interval
    has none, the latest known value from shallower depth is used. Cells with
    neither stay missing; such rows are not usable and lower ``coverage``,
    the fraction of rows whose present channels are all filled.

    Channels absent from the whole well are left untouched and do not count
    against coverage.
    """
    runs = label_runs(w.labels)
    filled = {}
    active = w.present_channels()
    for name in CHANNELS:
        src = w.channels[name]
        if name not in active or not np.isnan(src).any():
            filled[name] = src
            continue
        known = ~np.isnan(src)
        # index of the latest known value at or above each row
        last_known = np.maximum.accumulate(np.where(known, np.arange(len(src)), -1))
        out = src.copy()
        for start, stop, _ in runs:
            seg_known = known[start:stop]
            if seg_known.all():
                continue
            if seg_known.any():
                out[start:stop][~seg_known] = src[start:stop][seg_known].mean()
            elif start > 0 and last_known[start - 1] >= 0:
                out[start:stop] = src[last_known[start - 1]]
        filled[name] = out
    imputed = replace(w, channels=filled)
    mask = usable_rows(imputed)
    coverage = float(mask.mean())
    if coverage < 0.5:
        warnings.warn(f"{w.well_id}: only {coverage:.1%} of rows usable after imputation",
                      DataWarning, stacklevel=2)
    return imputed, coverage


def usable_rows(w: WellSeries) -> np.ndarray:
    """Rows where every channel present in the well has a value."""
    mask = np.ones(len(w), dtype=bool)
    for name in w.present_channels():
        mask &= ~np.isnan(w.channels[name])
    return mask


@dataclass(frozen=True)
class FeatureConfig:
    """Which inputs the classifier sees.

    ``channels`` selects raw MWD channels; ``use_apr``/``use_sed`` add the
    adjusted penetration rate and specific energy of drilling.
    """

    channels: tuple[str, ...] = CHANNELS
    use_apr: bool = True
    use_sed: bool = True
    borehole_area: float = DEFAULT_BOREHOLE_AREA
    eps: float = CLAMP_EPS

    def __post_init__(self) -> None:
        unknown = set(self.channels) - set(CHANNELS)
        if unknown:
            raise FeatureError(f"unknown channels {sorted(unknown)}")
        if not self.borehole_area > 0:
            raise FeatureError("borehole_area must be positive")
        if not self.feature_names:
            raise FeatureError("no features selected")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(self.channels) + (("apr",) if self.use_apr else ()) + (("sed",) if self.use_sed else ())

    @property
    def required_channels(self) -> tuple[str, ...]:
        need = list(self.channels)
        if self.use_apr:
            need += ["rop", "wob", "trq"]
        if self.use_sed:
            need += ["wob", "rpm", "trq", "rop"]
        return tuple(c for c in CHANNELS if c in need)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Model inputs for the usable rows of one well.

    ``index`` maps each row back to its grid index in the source well; rows
    dropped by imputation (a leading stretch before a channel's first known
    value) are absent.
    """

    well_id: str
    feature_names: tuple[str, ...]
    X: np.ndarray
    labels: np.ndarray
    index: np.ndarray
    depth: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]


def adjusted_penetration_rate(rop, wob, trq, eps: float = CLAMP_EPS) -> np.ndarray:
    rop = np.maximum(rop, eps)
    return rop / (np.maximum(wob, eps) * np.sqrt(np.maximum(trq, eps)))


def specific_energy(wob, rpm, trq, rop, area: float = DEFAULT_BOREHOLE_AREA,
                    eps: float = CLAMP_EPS) -> np.ndarray:
    """Teale specific energy: thrust term plus rotary term per unit area."""
    wob = np.maximum(wob, eps)
    trq = np.maximum(trq, eps)
    rop = np.maximum(rop, eps)
    return wob / area + 2 * np.pi * np.asarray(rpm) * trq / (area * rop)


def derive_features(w: WellSeries, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    """Build the feature matrix from an imputed well.

    Only usable rows are kept. Raises :class:`FeatureError` when a channel the
    configuration needs is absent from the well.
    """
    cfg = cfg or FeatureConfig()
    absent = [c for c in cfg.required_channels if np.isnan(w.channels[c]).all()]
    if absent:
        raise FeatureError(f"{w.well_id}: required channels absent: {absent}")
    rows = usable_rows(w)
    for c in cfg.required_channels:
        rows &= ~np.isnan(w.channels[c])
    index = np.flatnonzero(rows)
    ch = {c: w.channels[c][index] for c in CHANNELS}
    cols = [ch[c] for c in cfg.channels]
    if cfg.use_apr:
        cols.append(adjusted_penetration_rate(ch["rop"], ch["wob"], ch["trq"], cfg.eps))
    if cfg.use_sed:
        cols.append(specific_energy(ch["wob"], ch["rpm"], ch["trq"], ch["rop"],
                                    cfg.borehole_area, cfg.eps))
    X = np.column_stack(cols) if index.size else np.empty((0, len(cols)))
    X.setflags(write=False)
    return FeatureMatrix(
        well_id=w.well_id,
        feature_names=cfg.feature_names,
        X=X,
        labels=w.labels[index],
        index=index,
        depth=w.depth[index],
    )


def prepare_well(w: WellSeries, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    """Impute then derive features."""
    imputed, _ = impute_missing(w)
    return derive_features(imputed, cfg)


def pool_features(mats: Sequence[FeatureMatrix]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack feature matrices into ``(X, y, groups)``; ``groups`` tags each row with its well id."""
    if not mats:
        raise FeatureError("nothing to pool")
    names = {m.feature_names for m in mats}
    if len(names) != 1:
        raise FeatureError("feature layouts differ between wells")
    X = np.concatenate([m.X for m in mats])
    y = np.concatenate([m.labels for m in mats]).astype(np.float64)
    groups = np.concatenate([np.full(len(m), m.well_id, dtype=object) for m in mats])
    return X, y, groups


def class_balance(d: Dataset) -> tuple[float, float]:
    """Pooled per-sample ``(shale_fraction, sand_fraction)``."""
    total = sum(len(w) for w in d)
    if total == 0:
        raise ValueError("empty dataset")
    shale = sum(int(w.labels.sum()) for w in d) / total
    return shale, 1.0 - shale
