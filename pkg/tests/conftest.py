from __future__ import annotations

import sys

import numpy as np
import pytest

from psbr.games import BUILTIN_GAMES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(BUILTIN_GAMES))
def game(request):
    return BUILTIN_GAMES[request.param]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
