import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from drillwatch import CHANNELS, GRID_STEP, WellSeries
from drillwatch.welldata import grid_depths

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_well(labels, well_id="w", start_bin=18000, channels=None, density=None, seed=0):
    """Gridded well with the given labels; unspecified channels are filled with positive noise."""
    labels = np.asarray(labels, dtype=np.int8)
    rng = np.random.default_rng(seed)
    n = labels.size
    chans = {c: 10.0 + rng.random(n) + 5.0 * labels for c in CHANNELS}
    if channels:
        chans.update({k: np.asarray(v, dtype=np.float64) for k, v in channels.items()})
    return WellSeries(well_id, grid_depths(start_bin, n), chans, labels, density, GRID_STEP)


@pytest.fixture
def well_factory():
    return make_well


_VERDICTS: dict[int, str] = {}


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        extra = "; ".join(self.details)
        if exc_type is not None:
            extra = f"{extra}; {exc_type.__name__}: {exc}".lstrip("; ")
        line = f"criterion {self.number} {status}: {self.title}" + (f" ({extra})" if extra else "")
        _VERDICTS[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    """Context manager factory recording a PASS/FAIL line for an acceptance criterion."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])
