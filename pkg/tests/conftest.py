import numpy as np
import pytest

from dasksvd.coding import Dictionary

# acceptance outcomes, filled by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dictionary(rng, n, m):
    return Dictionary.from_columns(rng.standard_normal((n, m)))


@pytest.fixture
def small_dict(rng):
    return random_dictionary(rng, 8, 12)
