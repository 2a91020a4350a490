"""Online change detection over per-depth shale probabilities.

The classifier output ``l_t`` is read as the posterior probability of shale,
so the evidence for leaving the current regime is its log-odds (sign flipped
when the current regime is shale), clipped to ``[-lr_clip, lr_clip]``.
Three statistics accumulate that evidence (CUSUM, Shiryaev-Roberts and the
Shiryaev posterior statistic with a geometric prior); when the statistic
reaches the threshold for the current direction a change is declared, the
regime flips and the statistic restarts at zero.

Thin-layer dropping works on labels instead: short predicted runs are
relabeled with the preceding run's label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .welldata import GRID_STEP, Lithotype, label_runs

SATURATION_CEILING = 1e30


class DetectorKind(str, Enum):
    NONE = "none"
    CUSUM = "cusum"
    SHIRYAEV_ROBERTS = "sr"
    POSTERIOR = "posterior"
    THIN_LAYER = "ctl"


STATISTIC_KINDS = (DetectorKind.CUSUM, DetectorKind.SHIRYAEV_ROBERTS, DetectorKind.POSTERIOR)

# (to shale, to sand), tuned by grid search on the production field
DEFAULT_THRESHOLDS = {
    DetectorKind.CUSUM: (25.0, 50.0),
    DetectorKind.SHIRYAEV_ROBERTS: (1158e9, 1158e9),
    DetectorKind.POSTERIOR: (8e5, 7e5),
}
DEFAULT_PRIOR_P = 0.1
DEFAULT_THIN_W = 15


class Direction(str, Enum):
    SAND_TO_SHALE = "sand->shale"
    SHALE_TO_SAND = "shale->sand"

    @classmethod
    def into(cls, regime: int) -> "Direction":
        return cls.SAND_TO_SHALE if regime == Lithotype.SHALE else cls.SHALE_TO_SAND


class EventSource(str, Enum):
    ACTUAL = "actual"
    PREDICTED = "predicted"


@dataclass(frozen=True)
class ChangeEvent:
    index: int
    depth: float
    direction: Direction
    source: EventSource = EventSource.PREDICTED


@dataclass(frozen=True)
class DetectorConfig:
    """Detector choice and hyperparameters.

    Thresholds left as ``None`` take the shipped defaults for ``kind``; they
    are ignored by the label-level kinds (``none`` and ``ctl``).
    """

    kind: DetectorKind = DetectorKind.THIN_LAYER
    threshold_to_shale: float | None = None
    threshold_to_sand: float | None = None
    prior_p: float = DEFAULT_PRIOR_P
    thin_w: int = DEFAULT_THIN_W
    l0: float = 0.5
    lr_clip: float = 10.0
    ceiling: float = SATURATION_CEILING

    def __post_init__(self) -> None:
        kind = DetectorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in DEFAULT_THRESHOLDS:
            to_shale, to_sand = DEFAULT_THRESHOLDS[kind]
            if self.threshold_to_shale is None:
                object.__setattr__(self, "threshold_to_shale", to_shale)
            if self.threshold_to_sand is None:
                object.__setattr__(self, "threshold_to_sand", to_sand)
        for name in ("threshold_to_shale", "threshold_to_sand"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.prior_p < 1:
            raise ValueError("prior_p must be in (0, 1)")
        if self.thin_w < 1:
            raise ValueError("thin_w must be >= 1")
        if not 0 <= self.l0 <= 1:
            raise ValueError("l0 must be in [0, 1]")
        if not self.lr_clip > 0:
            raise ValueError("lr_clip must be positive")

    def threshold(self, regime: int) -> float:
        """Threshold for leaving ``regime``."""
        return self.threshold_to_shale if regime == Lithotype.SAND else self.threshold_to_sand

    def params(self) -> dict:
        """Hyperparameters that matter for this kind."""
        if self.kind in STATISTIC_KINDS:
            out = {"threshold_to_shale": self.threshold_to_shale,
                   "threshold_to_sand": self.threshold_to_sand}
            if self.kind is DetectorKind.POSTERIOR:
                out["prior_p"] = self.prior_p
            return out
        if self.kind is DetectorKind.THIN_LAYER:
            return {"thin_w": self.thin_w}
        return {}


@dataclass
class DetectorState:
    regime: int
    stat: float = 0.0
    t: int = 0
    saturated: bool = False


def log_likelihood_ratio(l: float, regime: int, clip: float = 10.0) -> float:
    """Clipped log-odds evidence for the regime opposite to ``regime``."""
    if l <= 0.0:
        z = -math.inf
    elif l >= 1.0:
        z = math.inf
    else:
        z = math.log(l / (1.0 - l))
    if regime == Lithotype.SHALE:
        z = -z
    return min(clip, max(-clip, z))


def step_cusum(s: float, z: float) -> float:
    return max(0.0, s + z)


def step_shiryaev_roberts(r: float, lam: float, ceiling: float = SATURATION_CEILING) -> float:
    return min((1.0 + r) * lam, ceiling)


def step_posterior(r: float, lam: float, p: float, ceiling: float = SATURATION_CEILING) -> float:
    """Shiryaev statistic under a geometric change-time prior with parameter ``p``."""
    return min((1.0 + r) * (lam / (1.0 - p)), ceiling)


def _step(cfg: DetectorConfig, stat: float, z: float) -> float:
    if cfg.kind is DetectorKind.CUSUM:
        return step_cusum(stat, z)
    if cfg.kind is DetectorKind.SHIRYAEV_ROBERTS:
        return step_shiryaev_roberts(stat, math.exp(z), cfg.ceiling)
    return step_posterior(stat, math.exp(z), cfg.prior_p, cfg.ceiling)


def detect_stream(probs: Sequence[float], cfg: DetectorConfig, initial_regime: int = Lithotype.SAND,
                  *, start_depth: float = 0.0, step: float = GRID_STEP
                  ) -> tuple[np.ndarray, list[ChangeEvent]]:
    """Run a statistic detector over ``probs`` in one pass.

    Returns the regime after each sample and the declared changes. A change
    declared at ``t`` relabels ``t`` itself.
    """
    if cfg.kind not in STATISTIC_KINDS:
        raise ValueError(f"detect_stream needs a statistic detector, got {cfg.kind.value!r}")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        raise ValueError("empty probability stream")
    state = DetectorState(regime=int(initial_regime))
    labels = np.empty(probs.size, dtype=np.int8)
    events = []
    for t, l in enumerate(probs.tolist()):
        z = log_likelihood_ratio(l, state.regime, cfg.lr_clip)
        state.stat = _step(cfg, state.stat, z)
        state.t = t
        if state.stat >= cfg.ceiling:
            state.saturated = True
        if state.stat >= cfg.threshold(state.regime):
            state.regime = 1 - state.regime
            state.stat = 0.0
            events.append(ChangeEvent(t, round(start_depth + t * step, 9), Direction.into(state.regime)))
        labels[t] = state.regime
    return labels, events


def drop_thin_layers(labels: Sequence[int], w: int) -> np.ndarray:
    """Merge every interior run of at most ``w`` samples into the run before it.

    Runs are visited top-down against the already-corrected labels, so a
    dropped layer extends its predecessor and the next run may then merge too.
    The first run has no predecessor, and the last one is still open at the
    end of the stream, so both are kept as they are.
    """
    labels = np.asarray(labels, dtype=np.int8)
    if labels.size == 0:
        raise ValueError("empty label stream")
    if w < 1:
        raise ValueError("w must be >= 1")
    out = labels.copy()
    runs = label_runs(labels)
    current = runs[0][2]
    for start, stop, label in runs[1:-1]:
        if stop - start <= w:
            out[start:stop] = current
        else:
            current = label
    return out


def labels_from_probs(probs: Sequence[float], l0: float = 0.5) -> np.ndarray:
    """Shale wherever the probability reaches ``l0``."""
    return (np.asarray(probs, dtype=np.float64) >= l0).astype(np.int8)


def change_points(labels: Sequence[int], *, start_depth: float = 0.0, step: float = GRID_STEP,
                  source: EventSource = EventSource.PREDICTED) -> list[ChangeEvent]:
    """One event per index where the label differs from the previous one."""
    labels = np.asarray(labels)
    idx = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    return [ChangeEvent(int(t), round(start_depth + t * step, 9), Direction.into(int(labels[t])), source)
            for t in idx]


def apply_detector(probs: Sequence[float], cfg: DetectorConfig, initial_regime: int | None = None,
                   *, start_depth: float = 0.0, step: float = GRID_STEP
                   ) -> tuple[np.ndarray, np.ndarray, list[ChangeEvent]]:
    """Turn probabilities into ``(raw_labels, corrected_labels, events)`` for any detector kind.

    Statistic detectors start in ``initial_regime``, defaulting to the
    classifier's label for the first sample.
    """
    probs = np.asarray(probs, dtype=np.float64)
    raw = labels_from_probs(probs, cfg.l0)
    if cfg.kind is DetectorKind.NONE:
        corrected = raw
    elif cfg.kind is DetectorKind.THIN_LAYER:
        corrected = drop_thin_layers(raw, cfg.thin_w)
    else:
        regime = int(raw[0]) if initial_regime is None else int(initial_regime)
        corrected, events = detect_stream(probs, cfg, regime, start_depth=start_depth, step=step)
        return raw, corrected, events
    return raw, corrected, change_points(corrected, start_depth=start_depth, step=step)
