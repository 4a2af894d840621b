from __future__ import annotations

import numpy as np
import pytest

from coriolis_transport.fields import VortexParams, make_gaussian_weight, make_vortex

ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def vortex():
    return make_vortex(VortexParams())


@pytest.fixture
def weight():
    return make_gaussian_weight()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
