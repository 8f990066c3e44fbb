import math

import numpy as np
import pytest
from scipy.integrate import quad


def _gauss_expect(fn, mean):
    """E[fn(L)] for L ~ N(mean, 2 mean) by adaptive quadrature."""
    s = math.sqrt(2 * mean)
    dens = lambda l: math.exp(-(l - mean) ** 2 / (4 * mean)) / math.sqrt(4 * math.pi * mean)
    lo, hi = mean - 12 * s, mean + 12 * s
    return quad(lambda l: fn(l) * dens(l), lo, hi, limit=400, epsabs=1e-13, epsrel=1e-12,
                points=[0.0] if lo < 0 < hi else None)[0]


def quad_j(m):
    if m == 0:
        return 0.0
    return 1.0 - _gauss_expect(lambda l: np.logaddexp(0.0, -l) / math.log(2), m)


def quad_cf(u):
    return quad_j(2 * u)


def quad_phi(m):
    if m == 0:
        return 1.0
    return 1.0 - _gauss_expect(lambda l: math.tanh(l / 2), m)


@pytest.fixture(scope="session")
def oracle():
    return {"j": quad_j, "cf": quad_cf, "phi": quad_phi}


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _ACCEPTANCE[number] = (title, "PASS" if rep.passed else "FAIL", rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, secs = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}  ({secs:.1f} s)")
