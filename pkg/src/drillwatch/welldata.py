"""Depth-gridded well data model and CSV ingestion.

A :class:`WellSeries` holds one well as parallel numpy arrays. Missing channel
cells are encoded as ``NaN``; every other value is finite. Raw wells (as read
from CSV) carry an arbitrary increasing depth sequence and ``step=None``;
:func:`bin_to_grid` turns them into a uniform 0.1 m grid.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

GRID_STEP = 0.1
CHANNELS = ("wob", "rpm", "trq", "flow_in", "flow_out", "spp", "rop", "hook_load")
NONNEGATIVE_CHANNELS = ("rop", "rpm")
CSV_COLUMNS = ("depth",) + CHANNELS + ("density", "lithotype")
# Decimal places kept on grid depths so that k * 0.1 prints as the short decimal.
_DEPTH_DECIMALS = 9


class WellDataError(ValueError):
    """Base class for ingestion and validation failures."""


class SchemaError(WellDataError):
    pass


class RowParseError(WellDataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LithotypeError(WellDataError):
    pass


class EmptyWellError(WellDataError):
    pass


class DataWarning(UserWarning):
    """Non-fatal data-quality notice (ignored columns, low coverage, ...)."""


class Lithotype(IntEnum):
    """Binary rock class. ``SHALE`` (shales and hard rocks) is the positive class."""

    SAND = 0
    SHALE = 1

    @classmethod
    def parse(cls, token: str) -> "Lithotype":
        key = token.strip().lower()
        if key == "sand":
            return cls.SAND
        if key == "shale":
            return cls.SHALE
        raise LithotypeError(f"unknown lithotype token {token!r} (expected sand or shale)")

    @property
    def token(self) -> str:
        return self.name.lower()


class MwdSample(NamedTuple):
    """One depth sample of the MWD channels; ``None`` marks a missing cell."""

    wob: float | None
    rpm: float | None
    trq: float | None
    flow_in: float | None
    flow_out: float | None
    spp: float | None
    rop: float | None
    hook_load: float | None


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WellSeries:
    """One well as parallel depth-indexed arrays.

    ``channels`` always holds all eight MWD channels (all-``NaN`` when the
    source lacked the column). ``step`` is ``None`` for raw, possibly
    irregular, wells and the grid spacing for gridded ones.
    """

    well_id: str
    depth: np.ndarray
    channels: Mapping[str, np.ndarray]
    labels: np.ndarray
    density: np.ndarray | None = None
    step: float | None = None

    def __post_init__(self) -> None:
        if not self.well_id:
            raise WellDataError("well_id must be non-empty")
        depth = _frozen(np.array(self.depth, dtype=np.float64))
        n = depth.shape[0]
        if depth.ndim != 1 or n < 1:
            raise EmptyWellError(f"well {self.well_id!r} has no samples")
        chans = {}
        for name in CHANNELS:
            values = self.channels.get(name)
            arr = np.full(n, np.nan) if values is None else np.array(values, dtype=np.float64)
            if arr.shape != (n,):
                raise WellDataError(f"channel {name!r} has length {arr.shape[0]}, expected {n}")
            if np.isinf(arr).any():
                raise WellDataError(f"channel {name!r} contains infinite values")
            chans[name] = _frozen(arr)
        unknown = set(self.channels) - set(CHANNELS)
        if unknown:
            raise WellDataError(f"unknown channels {sorted(unknown)}")
        labels = np.array(self.labels, dtype=np.int8)
        if labels.shape != (n,):
            raise WellDataError(f"labels have length {labels.shape[0]}, expected {n}")
        if not np.isin(labels, (Lithotype.SAND, Lithotype.SHALE)).all():
            raise LithotypeError("labels must be 0 (sand) or 1 (shale)")
        density = None
        if self.density is not None:
            density = np.array(self.density, dtype=np.float64)
            if density.shape != (n,):
                raise WellDataError(f"density has length {density.shape[0]}, expected {n}")
            density = _frozen(density)
        if self.step is not None and not self.step > 0:
            raise WellDataError("step must be positive")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "density", density)

    def __len__(self) -> int:
        return self.depth.shape[0]

    @property
    def start_depth(self) -> float:
        return float(self.depth[0])

    @property
    def is_gridded(self) -> bool:
        return self.step is not None

    def sample(self, t: int) -> MwdSample:
        return MwdSample(*(None if math.isnan(v) else float(v)
                           for v in (self.channels[c][t] for c in CHANNELS)))

    def missing(self, channel: str) -> np.ndarray:
        return np.isnan(self.channels[channel])

    def present_channels(self) -> tuple[str, ...]:
        """Channels with at least one known value."""
        return tuple(c for c in CHANNELS if not np.isnan(self.channels[c]).all())

    def equals(self, other: "WellSeries") -> bool:
        """Bit-level equality (``NaN`` cells compare equal)."""
        if (self.well_id, self.step, len(self)) != (other.well_id, other.step, len(other)):
            return False
        if (self.density is None) != (other.density is None):
            return False
        pairs = [(self.depth, other.depth), (self.labels, other.labels)]
        pairs += [(self.channels[c], other.channels[c]) for c in CHANNELS]
        if self.density is not None:
            pairs.append((self.density, other.density))
        return all(np.array_equal(a, b, equal_nan=True) for a, b in pairs)


@dataclass(frozen=True)
class Dataset:
    wells: tuple[WellSeries, ...]

    def __post_init__(self) -> None:
        wells = tuple(self.wells)
        ids = [w.well_id for w in wells]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise WellDataError(f"duplicate well ids: {dupes}")
        object.__setattr__(self, "wells", wells)

    def __len__(self) -> int:
        return len(self.wells)

    def __iter__(self) -> Iterator[WellSeries]:
        return iter(self.wells)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(w.well_id for w in self.wells)

    def get(self, well_id: str) -> WellSeries:
        for w in self.wells:
            if w.well_id == well_id:
                return w
        raise KeyError(well_id)


def _parse_float(cell: str, line: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise RowParseError(line, f"column {column!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(value):
        raise RowParseError(line, f"column {column!r}: non-finite value {cell!r}")
    return value


def parse_well_csv(text: str, well_id: str) -> WellSeries:
    """Parse a well CSV document into a raw (ungridded) :class:`WellSeries`.

    Rows are sorted by depth. Empty cells become missing values; columns
    outside the schema are ignored with a :class:`DataWarning`.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty CSV document") from None
    for required in ("depth", "lithotype"):
        if required not in header:
            raise SchemaError(f"missing required column {required!r}")
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in header")
    ignored = [h for h in header if h not in CSV_COLUMNS]
    if ignored:
        warnings.warn(f"{well_id}: ignoring unknown columns {ignored}", DataWarning, stacklevel=2)
    col = {name: header.index(name) for name in header if name in CSV_COLUMNS}
    has_density = "density" in col

    depths: list[float] = []
    labels: list[int] = []
    values: dict[str, list[float]] = {c: [] for c in CHANNELS}
    density: list[float] = []
    lines: list[int] = []
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise RowParseError(line, f"expected {len(header)} cells, got {len(row)}")
        dcell = row[col["depth"]].strip()
        if not dcell:
            raise RowParseError(line, "depth is empty")
        depths.append(_parse_float(dcell, line, "depth"))
        try:
            labels.append(Lithotype.parse(row[col["lithotype"]]))
        except LithotypeError as exc:
            raise LithotypeError(f"line {line}: {exc}") from None
        for c in CHANNELS:
            cell = row[col[c]].strip() if c in col else ""
            v = _parse_float(cell, line, c) if cell else math.nan
            if c in NONNEGATIVE_CHANNELS and v < 0:
                raise RowParseError(line, f"column {c!r} must be non-negative, got {v}")
            values[c].append(v)
        if has_density:
            cell = row[col["density"]].strip()
            density.append(_parse_float(cell, line, "density") if cell else math.nan)
        lines.append(line)
    if not depths:
        raise EmptyWellError(f"well {well_id!r} has no data rows")

    order = np.argsort(np.asarray(depths), kind="stable")
    sorted_depth = np.asarray(depths)[order]
    dup = np.flatnonzero(np.diff(sorted_depth) == 0)
    if dup.size:
        raise RowParseError(lines[order[dup[0] + 1]], f"duplicate depth {sorted_depth[dup[0]]}")
    return WellSeries(
        well_id=well_id,
        depth=sorted_depth,
        channels={c: np.asarray(values[c])[order] for c in CHANNELS},
        labels=np.asarray(labels, dtype=np.int8)[order],
        density=np.asarray(density)[order] if has_density else None,
    )


def read_well_csv(path: str | Path, well_id: str | None = None) -> WellSeries:
    path = Path(path)
    return parse_well_csv(path.read_text(encoding="utf-8"), well_id or path.stem)


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def well_to_csv(w: WellSeries, extra: Mapping[str, np.ndarray] | None = None) -> str:
    """Serialize a well with the schema column order.

    ``extra`` columns (e.g. derived features) are written before ``lithotype``.
    Floats use ``repr`` so present values round-trip bit-exactly.
    """
    extra = dict(extra or {})
    columns = ["depth", *CHANNELS]
    if w.density is not None:
        columns.append("density")
    columns += list(extra)
    columns.append("lithotype")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    series = [w.depth, *(w.channels[c] for c in CHANNELS)]
    if w.density is not None:
        series.append(w.density)
    series += [np.asarray(v, dtype=np.float64) for v in extra.values()]
    tokens = [Lithotype(int(x)).token for x in w.labels]
    for t in range(len(w)):
        writer.writerow([_fmt(s[t]) for s in series] + [tokens[t]])
    return buf.getvalue()


def grid_depths(first_bin: int, n: int, step: float = GRID_STEP) -> np.ndarray:
    return np.round((first_bin + np.arange(n)) * step, _DEPTH_DECIMALS)


def bin_index(depth: np.ndarray, step: float = GRID_STEP) -> np.ndarray:
    # tolerance absorbs representation error of decimal grid depths (1800.1 / 0.1)
    return np.floor(np.asarray(depth) / step + 1e-7).astype(np.int64)


def _bin_mean(pos: np.ndarray, values: np.ndarray, n_bins: int) -> np.ndarray:
    known = ~np.isnan(values)
    sums = np.bincount(pos[known], weights=values[known], minlength=n_bins)
    counts = np.bincount(pos[known], minlength=n_bins)
    out = np.full(n_bins, np.nan)
    np.divide(sums, counts, out=out, where=counts > 0)
    return out


def bin_to_grid(raw: WellSeries, step: float = GRID_STEP) -> WellSeries:
    """Average raw samples into uniform depth bins of width ``step``.

    Each bin's channel value is the mean of the known raw values inside it
    and its label is the majority lithotype, ties going to the deepest row.
    Bins without any raw sample have all channels missing and inherit the
    label of the bin above.
    """
    if len(raw) == 0:
        raise EmptyWellError(f"well {raw.well_id!r} is empty")
    if not step > 0:
        raise ValueError("step must be positive")
    if np.any(np.diff(raw.depth) <= 0):
        raise WellDataError("raw depths must be strictly increasing")
    k = bin_index(raw.depth, step)
    first = int(k[0])
    pos = k - first
    n_bins = int(pos[-1]) + 1

    channels = {c: _bin_mean(pos, raw.channels[c], n_bins) for c in CHANNELS}
    density = None if raw.density is None else _bin_mean(pos, raw.density, n_bins)

    n_shale = np.bincount(pos, weights=raw.labels.astype(float), minlength=n_bins)
    n_rows = np.bincount(pos, minlength=n_bins)
    deepest = np.full(n_bins, -1)
    np.maximum.at(deepest, pos, np.arange(len(raw)))
    labels = np.empty(n_bins, dtype=np.int8)
    prev = int(raw.labels[0])
    for b in range(n_bins):
        if n_rows[b] == 0:
            labels[b] = prev
            continue
        sh = n_shale[b]
        sa = n_rows[b] - sh
        labels[b] = 1 if sh > sa else 0 if sa > sh else raw.labels[deepest[b]]
        prev = int(labels[b])
    return WellSeries(
        well_id=raw.well_id,
        depth=grid_depths(first, n_bins, step),
        channels=channels,
        labels=labels,
        density=density,
        step=step,
    )


def label_runs(labels: Sequence[int] | np.ndarray) -> list[tuple[int, int, int]]:
    """Maximal constant runs as ``(start, stop, label)`` with ``stop`` exclusive."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], cuts))
    stops = np.concatenate((cuts, [labels.size]))
    return [(int(s), int(e), int(labels[s])) for s, e in zip(starts, stops)]


@dataclass(frozen=True)
class ValidationReport:
    well_id: str
    n_samples: int
    missing_fraction: dict[str, float]
    label_runs: int
    depth_monotone: bool
    coverage: float
    passes: bool
    coverage_required: float = 0.998
    notes: list[str] = field(default_factory=list)


def validate_well(w: WellSeries, coverage_required: float = 0.998) -> ValidationReport:
    """Data-quality report: missing fractions, run count, depth order and coverage.

    ``coverage`` is the share of rows usable after imputation; the well passes
    when it reaches ``coverage_required``.
    """
    from .preprocess import impute_missing

    n = len(w)
    missing = {c: float(np.isnan(w.channels[c]).mean()) for c in CHANNELS}
    monotone = bool(np.all(np.diff(w.depth) > 0))
    notes = []
    absent = [c for c in CHANNELS if missing[c] == 1.0]
    if absent:
        notes.append(f"channels absent: {', '.join(absent)}")
    if not monotone:
        notes.append("depth is not strictly increasing")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        _, coverage = impute_missing(w)
    return ValidationReport(
        well_id=w.well_id,
        n_samples=n,
        missing_fraction=missing,
        label_runs=len(label_runs(w.labels)),
        depth_monotone=monotone,
        coverage=coverage,
        passes=monotone and coverage >= coverage_required,
        coverage_required=coverage_required,
        notes=notes,
    )


def load_dataset(paths: Sequence[str | Path], step: float = GRID_STEP) -> Dataset:
    """Read CSV files (or directories of them) and grid every well."""
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("*.csv")))
        else:
            files.append(p)
    return Dataset(tuple(bin_to_grid(read_well_csv(f), step) for f in files))


def with_labels(w: WellSeries, labels: np.ndarray) -> WellSeries:
    return replace(w, labels=labels)
