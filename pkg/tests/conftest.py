import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def heavy(rng, shape, df=3.0):
    return rng.standard_t(df, shape)


def gram_from(rng, m, tokens=None):
    X = rng.standard_normal((2, tokens or 2 * m, m)) * np.exp(rng.standard_normal(m))
    return X, np.einsum("bli,blj->ij", X, X)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
