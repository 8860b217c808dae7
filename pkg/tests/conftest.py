import os
import sys

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))


def plane_cloud(n=400, half=0.05, seed=0, z=0.0):
    g = np.random.Generator(np.random.Philox(seed))
    xy = g.uniform(-half, half, size=(n, 2))
    return np.column_stack([xy, np.full(n, z)])


def sphere_cloud(n=3000, r=0.1, seed=0, center=(0.0, 0.0, 0.0)):
    g = np.random.Generator(np.random.Philox(seed))
    v = g.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.asarray(center) + r * v


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
