from __future__ import annotations

import numpy as np
import pytest

from catfind.problem import load_problem


@pytest.fixture(scope="session")
def swallowtail():
    return load_problem("swallowtail").field()


@pytest.fixture(scope="session")
def butterfly():
    return load_problem("butterfly").field()


@pytest.fixture(scope="session")
def polarity():
    return load_problem("polarity").field()


@pytest.fixture(scope="session")
def fold():
    return load_problem("fold").field()


@pytest.fixture(scope="session")
def cusp_quadratic():
    return load_problem("cusp_quadratic").field()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})")
