import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

warnings.filterwarnings("ignore", message=".*TBB.*")

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_video():
    """24 frames of a 12x10 RGB scene with a shared flicker plus noise."""
    rng = np.random.default_rng(7)
    t = np.arange(24)[:, None, None, None]
    base = rng.uniform(60, 180, (1, 10, 12, 3))
    flicker = 15 * np.sin(t / 3.0)
    return np.clip(base + flicker + rng.normal(0, 2, (24, 10, 12, 3)), 0, 255)


@pytest.fixture(scope="session")
def small_model(small_video):
    from cp3 import ModelParams, train

    return train(small_video, ModelParams(k_supports=6, seed=3))


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one verdict line per acceptance criterion."""

    def record(criterion, ok, detail):
        verdict = "INFO" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {criterion}: {verdict}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        def order(line):
            tag = line.split(":")[0].split()[1]
            digits = "".join(ch for ch in tag if ch.isdigit())
            return int(digits), "INFO" in line, tag

        for line in sorted(_ACCEPTANCE_LINES, key=order):
            terminalreporter.write_line(line)
