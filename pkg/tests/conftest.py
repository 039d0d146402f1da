from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from helpers import load  # noqa: E402

from fraglump.dynamics import build_ctmc  # noqa: E402
from fraglump.network import expand  # noqa: E402


@pytest.fixture(scope="session")
def core_model():
    return load("example1_core")


@pytest.fixture(scope="session")
def core_net(core_model):
    return expand(core_model)


@pytest.fixture(scope="session")
def core_chain(core_net, core_model):
    return build_ctmc(core_net, core_net.initial_state(core_model))


@pytest.fixture(scope="session")
def trimer_model():
    return load("example1_trimer")


@pytest.fixture(scope="session")
def perturbed_model():
    return load("example1_perturbed")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
