import numpy as np
import pytest

from fastools.imaging import Raster


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_gray(rng, h=8, w=8) -> Raster:
    return Raster(rng.integers(0, 256, (h, w)).astype(np.uint8))


def random_rgb(rng, h=8, w=8) -> Raster:
    return Raster(rng.integers(0, 256, (h, w, 3)).astype(np.uint8))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One explicit pass/fail line per acceptance criterion."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" in nodeid and "::test_criterion" in nodeid:
                rows.append((nodeid.split("::")[-1], "PASS" if outcome == "passed" else "FAIL"))
    if rows:
        terminalreporter.section("acceptance criteria")
        for name, verdict in sorted(rows):
            terminalreporter.write_line(f"{verdict}  {name}")
