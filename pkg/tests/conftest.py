import numpy as np
import pytest

from cvgl.pipeline import PipelineOptions, run_pipeline
from cvgl.sim import generate_scene


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scene():
    """Noiseless synthetic scene, shared read-only across tests."""
    return generate_scene(seed=7)


@pytest.fixture(scope="session")
def localized(scene):
    return run_pipeline(scene.bundle, scene.gallery, PipelineOptions())


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
