import numpy as np
import pytest

from cotreward.embeddings import SyntheticEncoder
from cotreward.toyenv import FrameFeature


@pytest.fixture(scope="session")
def encoder():
    return SyntheticEncoder()


def frames_with(*tag_sets):
    return [FrameFeature(np.zeros(8), frozenset(tags)) for tags in tag_sets]


@pytest.fixture
def make_frames():
    return frames_with


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
