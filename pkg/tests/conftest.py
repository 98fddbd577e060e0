import numpy as np
import pytest

from flowgate import rng as frng
from flowgate.diffcore import Mlp, ParamRegistry


@pytest.fixture
def registry():
    return ParamRegistry()


@pytest.fixture
def gen():
    return frng.stream(1234, "tests")


def make_mlp(registry, gen, widths, name="f", **kwargs):
    return Mlp.create(registry, name, widths, gen=gen, **kwargs)


# verdict lines recorded by the acceptance tests; echoed after the test
# summary so they survive pytest's output capture
VERDICTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)


def finite_difference_grad(fn, vector, indices, h=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    out = np.zeros(len(indices))
    for k, i in enumerate(indices):
        vp, vm = vector.copy(), vector.copy()
        vp[i] += h
        vm[i] -= h
        out[k] = (fn(vp) - fn(vm)) / (2 * h)
    return out
