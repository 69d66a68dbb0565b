import sys

import numpy as np
import pytest

from cocyclone.fixtures import rng_for
from cocyclone.geometry import SPD, Euclidean, Hyperbolic

SPACES = {
    "R4": lambda: Euclidean(4),
    "H2": lambda: Hyperbolic(-1.0),
    "H2k": lambda: Hyperbolic(-0.3),
    "SPD2": lambda: SPD(2),
    "SPD3": lambda: SPD(3),
}


@pytest.fixture(params=sorted(SPACES))
def space(request):
    return SPACES[request.param]()


@pytest.fixture
def rng(request):
    # one stream per test so reordering tests never changes the draws
    return rng_for(20240917, abs(hash(request.node.name)) % (1 << 32))


def tol_for(space):
    return 1e-7 if space.kind == "spd" and space.dim >= 3 else 1e-8


def close(a, b, atol):
    return np.allclose(np.asarray(a), np.asarray(b), atol=atol, rtol=0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
