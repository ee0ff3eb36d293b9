import warnings

import numpy as np
import pytest

from ionchain.constants import TWO_PI
from ionchain.trap import BE9, MG24, ClampWarning, TrapModel, fit_trap_from_reference

BE_FREQS = [12.26e6, 11.19e6, 2.69e6]
MG_FREQS = [4.82e6, 3.72e6, 1.65e6]


def fitted_trap():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClampWarning)
        return fit_trap_from_reference(BE9, BE_FREQS, MG24, MG_FREQS)


def isotropic_static_trap(species, axial_hz, radial_hz):
    """Trap with the requested single-ion frequencies for ``species``: rf
    provides the radial confinement, a static term the axial one."""
    m = species.mass
    wz = TWO_PI * axial_hz
    wr = TWO_PI * radial_hz
    b = m * wz * wz
    a = m * m * (wr * wr + 0.5 * wz * wz)
    return TrapModel(rf_coeff=[a, a, 0.0], static_coeff=[-b / 2, -b / 2, b], reference_mass_amu=species.mass_amu)


@pytest.fixture(scope="session")
def table_trap():
    return fitted_trap()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    prev = _CRITERIA.get(number)
    status = "PASS" if rep.passed else "FAIL"
    if prev is not None and prev[1] == "FAIL":
        status = "FAIL"
    _CRITERIA[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"{status} criterion {number:2d}: {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
