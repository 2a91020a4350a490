"""Synthetic layered wells standing in for a production field.

Lithology follows an alternating renewal process: sand and shale layers
alternate with lognormal thicknesses, the shale scale being adjusted so the
long-run shale share matches ``shale_fraction_target``. Every layer gets a
random mixing factor that pulls its channel and density means toward the
other lithotype, so weakly contrasting boundaries are both harder to detect
and show a small density difference. Each well carries its own additive
channel offsets (domain shift between wells).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import lfilter

from .welldata import CHANNELS, GRID_STEP, Dataset, Lithotype, WellSeries, bin_index, grid_depths

# (sand, shale) per channel
DEFAULT_CHANNEL_MEANS = {
    "wob": (9.0, 11.25),
    "rpm": (60.0, 55.5),
    "trq": (14.0, 17.0),
    "flow_in": (32.0, 32.0),
    "flow_out": (31.0, 30.7),
    "spp": (150.0, 156.0),
    "rop": (24.0, 13.5),
    "hook_load": (100.0, 99.25),
}
DEFAULT_CHANNEL_STDS = {
    "wob": (0.75, 0.75),
    "rpm": (2.5, 2.5),
    "trq": (1.0, 1.0),
    "flow_in": (0.5, 0.5),
    "flow_out": (0.5, 0.5),
    "spp": (2.5, 2.5),
    "rop": (3.0, 3.0),
    "hook_load": (1.0, 1.0),
}


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; ``seed`` fully determines the output.

    Thicknesses are in meters as ``(mu, sigma)`` of the underlying normal.
    The shale ``mu`` is a starting point only: it is shifted so the expected
    shale share equals ``shale_fraction_target``. ``well_offset_std`` and
    ``noise_std`` are multiples of each channel's sand standard deviation;
    the noise is autocorrelated along depth over ``noise_corr_m`` meters.
    """

    n_wells: int = 20
    well_length_m: float = 800.0
    start_depth: float = 1800.0
    shale_fraction_target: float = 0.165
    sand_thickness: tuple[float, float] = (math.log(20.0), 0.9)
    shale_thickness: tuple[float, float] = (math.log(4.0), 0.9)
    channel_means: dict = field(default_factory=lambda: dict(DEFAULT_CHANNEL_MEANS))
    channel_stds: dict = field(default_factory=lambda: dict(DEFAULT_CHANNEL_STDS))
    well_offset_std: float = 0.6
    noise_std: float = 1.0
    noise_corr_m: float = 1.0
    layer_mix_max: float = 0.6
    density_means: tuple[float, float] = (2.25, 2.55)
    density_std: float = 0.03
    missing_rate: float | dict = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_wells < 1:
            raise SynthError("n_wells must be >= 1")
        if not 0 < self.shale_fraction_target < 1:
            raise SynthError("shale_fraction_target must be in (0, 1)")
        for name in ("sand_thickness", "shale_thickness"):
            mu, sigma = getattr(self, name)
            if not (math.isfinite(mu) and sigma >= 0):
                raise SynthError(f"{name} needs finite mu and sigma >= 0")
        if not 0 <= self.layer_mix_max < 1:
            raise SynthError("layer_mix_max must be in [0, 1)")
        for name in ("well_offset_std", "noise_std", "density_std", "noise_corr_m"):
            if getattr(self, name) < 0:
                raise SynthError(f"{name} must be >= 0")
        rates = self.missing_rates().values()
        if any(not 0 <= r <= 1 for r in rates):
            raise SynthError("missing rates must be in [0, 1]")
        if set(self.channel_means) != set(CHANNELS) or set(self.channel_stds) != set(CHANNELS):
            raise SynthError("channel_means/channel_stds must cover every channel")

    def missing_rates(self) -> dict[str, float]:
        if isinstance(self.missing_rate, dict):
            return {c: float(self.missing_rate.get(c, 0.0)) for c in CHANNELS}
        return {c: float(self.missing_rate) for c in CHANNELS}

    def shale_mu(self) -> float:
        """Shale log-thickness location giving the target shale share in expectation."""
        mu_sa, s_sa = self.sand_thickness
        _, s_sh = self.shale_thickness
        f = self.shale_fraction_target
        mean_sand = math.exp(mu_sa + s_sa**2 / 2)
        return math.log(f / (1 - f) * mean_sand) - s_sh**2 / 2

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(cfg: SynthConfig, well_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, well_index]))


def correlated_noise(rng: np.random.Generator, n: int, corr_m: float) -> np.ndarray:
    """Unit-variance stationary AR(1) noise with e-folding length ``corr_m`` meters."""
    eps = rng.standard_normal(n)
    if corr_m <= 0:
        return eps
    phi = math.exp(-GRID_STEP / corr_m)
    eps[1:] *= math.sqrt(1 - phi * phi)
    return lfilter([1.0], [1.0, -phi], eps)


def generate_layers(cfg: SynthConfig, rng: np.random.Generator, n_samples: int):
    """Alternating layers as ``(lithotype, n_samples, thickness_m)`` covering ``n_samples``."""
    f = cfg.shale_fraction_target
    params = {Lithotype.SAND: cfg.sand_thickness,
              Lithotype.SHALE: (cfg.shale_mu(), cfg.shale_thickness[1])}
    lith = Lithotype.SHALE if rng.random() < f else Lithotype.SAND
    layers = []
    total = 0
    while total < n_samples:
        mu, sigma = params[lith]
        thickness = float(rng.lognormal(mu, sigma))
        k = max(1, int(round(thickness / GRID_STEP)))
        layers.append((lith, k, thickness))
        total += k
        lith = Lithotype(1 - lith)
    return layers


def generate_well(cfg: SynthConfig, well_index: int) -> WellSeries:
    n = int(round(cfg.well_length_m / GRID_STEP))
    if n < 1:
        raise SynthError("well_length_m is shorter than one grid sample")
    rng = _rng(cfg, well_index)
    layers = generate_layers(cfg, rng, n)
    labels = np.empty(n, dtype=np.int8)
    mix = np.empty(n)
    pos = 0
    for lith, k, _ in layers:
        stop = min(n, pos + k)
        labels[pos:stop] = lith
        mix[pos:stop] = rng.uniform(0.0, cfg.layer_mix_max)
        pos = stop
        if pos >= n:
            break

    other = 1 - labels
    channels = {}
    for name in CHANNELS:
        means = np.asarray(cfg.channel_means[name], dtype=np.float64)
        stds = np.asarray(cfg.channel_stds[name], dtype=np.float64)
        offset = cfg.well_offset_std * stds[0] * rng.standard_normal()
        layer_mean = means[labels] + mix * (means[other] - means[labels])
        noise = correlated_noise(rng, n, cfg.noise_corr_m)
        values = layer_mean + offset + cfg.noise_std * stds[labels] * noise
        channels[name] = np.maximum(values, 0.0)
    dmeans = np.asarray(cfg.density_means)
    density = (dmeans[labels] + mix * (dmeans[other] - dmeans[labels])
               + cfg.density_std * rng.standard_normal(n))
    for name, rate in cfg.missing_rates().items():
        if rate > 0:
            holes = rng.random(n) < rate
            channels[name] = np.where(holes, np.nan, channels[name])

    first = int(bin_index(np.array([cfg.start_depth]))[0])
    return WellSeries(
        well_id=f"synth-{well_index:03d}",
        depth=grid_depths(first, n),
        channels=channels,
        labels=labels,
        density=density,
        step=GRID_STEP,
    )


def generate_field(cfg: SynthConfig) -> Dataset:
    return Dataset(tuple(generate_well(cfg, i) for i in range(cfg.n_wells)))
