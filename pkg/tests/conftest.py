import math
import sys
import warnings

import numpy as np
import pytest

from freqbin.device import hybridize, load_params


@pytest.fixture(scope="session")
def params():
    return load_params()


@pytest.fixture(scope="session")
def frame(params):
    return hybridize(params)


@pytest.fixture(scope="session")
def ideal_setup():
    from freqbin.pipeline import prepare

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return prepare(ideal=True)


@pytest.fixture(scope="session")
def setup():
    from freqbin.pipeline import prepare

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return prepare()


def random_density(n, rank=None, seed=0):
    rng = np.random.default_rng(seed)
    rank = n if rank is None else rank
    g = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_unitary(n, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


THETAS = [0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4, math.pi]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
