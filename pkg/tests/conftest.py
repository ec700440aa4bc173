import numpy as np
import pytest

from leohandover.channel import stats_from_links


def random_stats(rng, L=3, U=3, N=4, noise_var=0.1, kdb=(15.0, 20.0)):
    gamma = rng.uniform(0.5, 2.0, (L, U))
    k = 10 ** (rng.uniform(*kdb, (L, U)) / 10)
    b = rng.standard_normal((L, U, N)) + 1j * rng.standard_normal((L, U, N))
    return stats_from_links(gamma, k, b, noise_var=noise_var)


def random_w(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
