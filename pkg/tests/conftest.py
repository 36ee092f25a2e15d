import numpy as np
import pytest
import torch

from talkinghead.face3d import Camera, synthetic_basis

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def basis():
    return synthetic_basis()


@pytest.fixture(scope="session")
def camera():
    return Camera.for_image(64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains models; seconds to minutes")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
