import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from chemcompass import RadicalPairModel
from chemcompass.model import omega_from_field

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

OMEGA_46 = omega_from_field(46.0)


@pytest.fixture
def regime2():
    return RadicalPairModel.one_nucleus(46.0, 0.5, OMEGA_46 / 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (a + a.conj().T) / 2


thetas = st.floats(0.0, np.pi, allow_nan=False)
phis = st.floats(0.0, 2 * np.pi, allow_nan=False)
rates = st.floats(0.1, 5.0)
couplings = st.floats(0.0, 40.0)
fields_uT = st.floats(1.0, 150.0)


# --------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion test

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    details = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _ACCEPTANCE.append((str(number), title, "PASS" if rep.passed else "FAIL", details))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, verdict, details in _ACCEPTANCE:
        terminalreporter.write_line(f"{verdict} criterion {number} ({title}): {details}")
