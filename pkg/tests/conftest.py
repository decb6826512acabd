import numpy as np
import pytest

from sabias import fixtures
from sabias.markov import stationary_info, validate_chain


@pytest.fixture(scope="session")
def two_state():
    return validate_chain([[0.9, 0.1], [0.2, 0.8]])


@pytest.fixture(scope="session")
def canonical():
    return fixtures.canonical()


@pytest.fixture(scope="session")
def canonical_info(canonical):
    return stationary_info(canonical.chain)


def random_chain(rng, n, sparsity=0.0):
    P = rng.random((n, n)) + 0.05
    if sparsity:
        P *= rng.random((n, n)) > sparsity
        P[np.arange(n), np.arange(n)] += 0.1
        P[np.arange(n), (np.arange(n) + 1) % n] += 0.1
    return P / P.sum(axis=1, keepdims=True)


ACCEPTANCE: dict = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (ok, detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
