import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from convexreg import Volume

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_volume(dims, seed=0, freq=0.15):
    """Band-limited image: a sum of a few low-frequency sinusoids, range ~[0, 1]."""
    r = np.random.default_rng(seed)
    grid = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"))
    img = np.zeros(dims)
    for _ in range(4):
        k = r.uniform(-freq, freq, 3)
        img += np.cos(np.tensordot(k, grid, axes=1) + r.uniform(0, 2 * np.pi))
    img = (img - img.min()) / (img.max() - img.min())
    return Volume(img[None])


def interior(a, b=2):
    """Drop ``b`` voxels at every face of the last three axes."""
    return a[..., b:-b, b:-b, b:-b]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
