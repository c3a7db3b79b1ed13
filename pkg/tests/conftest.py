import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedtt.data import SynthesisConfig, split_series, synthesize_multi_city
from fedtt.fpt import ClientData, FederationConfig, TargetData

settings.register_profile("fedtt", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fedtt")

SHIFT_SCALES = [[1.3, 0.8, 1.1], [0.7, 1.2, 0.9], [1.1, 1.0, 0.8], [1.0, 1.0, 1.0]]
SHIFT_OFFSETS = [[50, -5, 0.02], [-30, 8, -0.01], [20, 3, 0.0], [0, 0, 0]]


def benchmark_cities(seed: int, sensor_counts=(12, 10, 14, 8), length: int = 600):
    k = len(sensor_counts)
    cfg = SynthesisConfig(sensor_counts=list(sensor_counts), length=length,
                          scales=SHIFT_SCALES[-k:], offsets=SHIFT_OFFSETS[-k:])
    return synthesize_multi_city(cfg, seed)


def federation_for(cities, **options) -> FederationConfig:
    """Every city but the last is a client; the last is the target with the default split."""
    train, _, test, _ = split_series(cities[-1].series)
    return FederationConfig([ClientData(c.series, c.network) for c in cities[:-1]],
                            TargetData(train, test, cities[-1].network), **options)


@pytest.fixture(scope="session")
def cities():
    return benchmark_cities(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; the lines are repeated in the session summary."""
    def report(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
