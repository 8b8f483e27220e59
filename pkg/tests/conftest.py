import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical checks")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, p, rank=None):
    a = rng.standard_normal((rank or p + 2, p))
    return a.T @ a


def mc_z(sample_mean, target, sd, n):
    return (sample_mean - target) / (sd / np.sqrt(n))


_ACCEPTANCE = {}


@pytest.fixture
def acceptance_report(capsys):
    def report(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        with capsys.disabled():
            print(f"\n{line}")
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
