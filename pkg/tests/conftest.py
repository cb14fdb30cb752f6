import numpy as np
import pytest

from mmreg.volume import Volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_volume(dims=(16, 14, 12), spacing=(1.0, 1.0, 1.0), seed=0):
    """Band-limited test volume: a few low-frequency cosines."""
    r = np.random.default_rng(seed)
    grids = np.meshgrid(*[np.arange(n) / n for n in dims], indexing="ij")
    data = np.zeros(dims)
    for _ in range(3):
        k = r.uniform(0.5, 1.5, size=3)
        phase = r.uniform(0, 2 * np.pi)
        data += np.cos(2 * np.pi * sum(ki * g for ki, g in zip(k, grids)) + phase)
    return Volume((data - data.min()) / (data.max() - data.min()), spacing)


def blob_volume(dims=(24, 24, 24), center=None, sigma=(4.0, 3.0, 5.0), spacing=(1.0, 1.0, 1.0)):
    center = np.asarray(center if center is not None else [(n - 1) / 2 for n in dims])
    g = np.stack(np.meshgrid(*[np.arange(n) for n in dims], indexing="ij"), axis=-1)
    rho2 = (((g - center) / np.asarray(sigma)) ** 2).sum(-1)
    return Volume(np.exp(-0.5 * rho2), spacing)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
