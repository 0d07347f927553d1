import math

import numpy as np
import pytest

from torusflow.flow import DiffeoState, random_shear_map
from torusflow.spectrum import Spectrum, WaveVector

# acceptance results, keyed by criterion number: list of (check, passed, detail)
ACCEPTANCE = {}


def record(criterion, check, passed, detail=""):
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in checks)
        failed = "; ".join(f"{name}: {detail}" for name, p, detail in checks if not p)
        passed = "; ".join(f"{name}: {detail}" for name, p, detail in checks if p)
        msg = f"failed: {failed} | passed: {passed}" if failed else passed
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} - {msg}")


@pytest.fixture
def two_mode():
    return Spectrum(((WaveVector(1, 0), 1.0), (WaveVector(0, 1), 1.0)), radius=1)


@pytest.fixture
def eight_direction():
    return Spectrum.from_shells({1: 1.0, 2: 1.0}, radius=math.sqrt(2))


def random_pair(rng, grid_n, amplitude=0.3, n_shears=3):
    g = DiffeoState.from_map(random_shear_map(rng, amplitude, n_shears), grid_n)
    gt = DiffeoState.from_map(random_shear_map(rng, amplitude, n_shears), grid_n)
    return g, gt


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)
