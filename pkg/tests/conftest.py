import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from polyrecon.geometry import convex_hull

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_polyhedron(rng, n=None):
    """Hull of random points in a randomly placed and scaled ball."""
    n = n or int(rng.integers(8, 40))
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    pts *= rng.uniform(0.3, 1.0, size=(n, 1)) ** (1 / 3)
    scale = rng.uniform(0.2, 5.0, size=3)
    return convex_hull(pts * scale + rng.uniform(-10, 10, size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
