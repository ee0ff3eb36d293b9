import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import isotropic_static_trap
from ionchain.chain import find_mode, solve_modes
from ionchain.constants import ELEMENTARY_CHARGE, HBAR, TWO_PI
from ionchain.cooling import (
    FieldNoiseSpec,
    LaserField,
    ModelAssumptionWarning,
    anomalous_heating_rate,
    carrier_rabi_factor,
    doppler_equilibrium,
    doppler_equilibrium_from_coupling,
    doppler_rate,
    doppler_rate_from_coupling,
    excited_population,
    excited_population_slope,
    gate_infidelity,
    mode_coupling,
    nbar_for_infidelity,
    radiation_pressure_force,
    rate_report,
    recoil_heating_rate,
    scattering_rate,
    wavevector,
)
from ionchain.errors import InputError, ModelAssumptionError
from ionchain.trap import BE9, CA40, MG24

GAMMA = TWO_PI * 20e6


def laser(s=1.0, delta=-0.5, direction=(0, 0, 1), wl=313e-9, gamma=GAMMA):
    return LaserField.from_saturation(wavevector(wl, direction), s, delta * gamma, gamma)


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelAssumptionWarning)
        yield


def single_ion(species=BE9, axial=1e6):
    ms = solve_modes(isotropic_static_trap(species, axial, 8e6), (species,))
    return ms, find_mode(ms, "z", "ip")


def test_excited_population_values():
    assert excited_population(laser(1.0, -0.5)) == pytest.approx(1 / 6, rel=1e-14)
    assert excited_population(laser(2.0, 0.0)) == pytest.approx(1 / 3, rel=1e-14)
    assert excited_population(laser(1e9, 0.0)) == pytest.approx(0.5, rel=1e-8)


def test_slope_matches_finite_difference():
    la = laser(0.7, -0.3)
    h = 1e-6 * GAMMA
    up = LaserField(la.wavevector, la.rabi_frequency, la.detuning + h, la.linewidth)
    dn = LaserField(la.wavevector, la.rabi_frequency, la.detuning - h, la.linewidth)
    fd = (excited_population(up) - excited_population(dn)) / (2 * h)
    assert excited_population_slope(la) == pytest.approx(fd, rel=1e-7)


def test_population_monotone_and_peak():
    s_grid = np.linspace(0.01, 10, 50)
    vals = [excited_population(laser(s, -0.4)) for s in s_grid]
    assert np.all(np.diff(vals) > 0)
    d_grid = np.linspace(-3, 3, 61)
    vals = [excited_population(laser(1.0, d)) for d in d_grid]
    assert d_grid[int(np.argmax(vals))] == 0.0


def test_doppler_rate_sign():
    ms, a = single_ion()
    assert doppler_rate(ms, laser(0.1, 0.0), 0, a, 3.0) == 0.0
    for d in np.linspace(-5, 5, 21):
        r = doppler_rate(ms, laser(0.1, d), 0, a, 3.0)
        if d < 0:
            assert r < 0
        elif d > 0:
            assert r > 0


def test_doppler_rate_zero_for_perpendicular_beam():
    ms, a = single_ion()
    assert doppler_rate(ms, laser(0.1, -0.5, direction=(1, 0, 0)), 0, a, 1.0) == 0.0


def test_rate_scales_as_eta_squared():
    ms, a = single_ion()
    la = laser(0.1, -0.5)
    c = mode_coupling(ms, la, 0, a)
    r1 = doppler_rate_from_coupling(c, la, 2.0)
    r2 = doppler_rate_from_coupling(c.scaled(2.0), la, 2.0)
    assert r2 / r1 == pytest.approx(4.0, rel=1e-12)


def test_recoil_heating_cases():
    ms, a = single_ion()
    la = laser(0.1, -0.5)
    c = mode_coupling(ms, la, 0, a)
    expect = 1.4 * c.eta**2 * scattering_rate(la)
    assert recoil_heating_rate(ms, la, 0, a) == pytest.approx(expect, rel=1e-12)
    perp = laser(0.1, -0.5, direction=(1, 0, 0))
    only_spont = 0.4 * HBAR * (TWO_PI / 313e-9) ** 2 / (2 * BE9.mass * c.omega) * scattering_rate(perp)
    assert recoil_heating_rate(ms, perp, 0, a) == pytest.approx(only_spont, rel=1e-12)
    assert recoil_heating_rate(ms, la, 0, a) > 0


def test_recoil_zero_for_ion_not_in_mode():
    # equal-mass pair: radial modes; use a mode where ion 0 has no amplitude
    ms = solve_modes(isotropic_static_trap(CA40, 1e6, 5e6), (CA40, CA40))
    la = laser(0.1, -0.5, wl=397e-9)
    c = mode_coupling(ms, la, 0, find_mode(ms, "z", "oop"))
    zero = type(c)(c.omega, c.mass, 0.0, 0.0)
    from ionchain.cooling import recoil_heating_from_coupling

    assert recoil_heating_from_coupling(zero, la) == 0.0


def test_doppler_equilibrium_properties():
    ms, a = single_ion()
    la = laser(0.1, -0.5)
    c = mode_coupling(ms, la, 0, a)
    n0 = doppler_equilibrium_from_coupling(c, la)
    assert doppler_equilibrium_from_coupling(c.scaled(0.5), la) == pytest.approx(n0, rel=1e-6)
    half = doppler_equilibrium_from_coupling(c, laser(0.05, -0.5))
    assert abs(half / n0 - 1) < 0.05
    with pytest.raises(ModelAssumptionError):
        doppler_equilibrium_from_coupling(c, laser(0.1, 0.5))


def test_doppler_limit_band():
    # Gamma / omega = 20
    ms, a = single_ion(axial=1e6)
    la = laser(0.1, -0.5, gamma=20 * TWO_PI * 1e6)
    n = doppler_equilibrium(ms, la, 0, a)
    assert 5 <= n <= 15


def test_anomalous_heating_single_ion():
    ms, a = single_ion(CA40)
    s_e = 1e-12
    noise = FieldNoiseSpec((0, 0, 1), lambda w: s_e)
    w = ms.frequencies[a]
    expect = ELEMENTARY_CHARGE**2 * s_e / (4 * HBAR * w * CA40.mass)
    assert anomalous_heating_rate(ms, a, noise) == pytest.approx(expect, rel=1e-12)


def test_anomalous_heating_antisymmetric_mode_zero():
    ms = solve_modes(isotropic_static_trap(CA40, 1e6, 5e6), (CA40, CA40))
    noise = FieldNoiseSpec((0, 0, 1), lambda w: 1e-12)
    assert anomalous_heating_rate(ms, find_mode(ms, "z", "oop"), noise) == 0.0


def test_anomalous_heating_unequal_masses(table_trap):
    ms = solve_modes(table_trap, (BE9, MG24))
    noise = FieldNoiseSpec((0, 0, 1), [(0.0, 1e-12), (1e9, 1e-12)])
    assert anomalous_heating_rate(ms, find_mode(ms, "z", "oop"), noise) > 0


def test_anomalous_heating_sign_invariance(table_trap):
    ms = solve_modes(table_trap, (BE9, MG24))
    flipped = type(ms)(ms.config, ms.eigenvalues, -ms.eigenvectors, ms.hessian)
    noise = FieldNoiseSpec((0, 0, 1), lambda w: 2e-13)
    for a in range(ms.n_modes):
        assert anomalous_heating_rate(flipped, a, noise) == anomalous_heating_rate(ms, a, noise)


def test_noise_spec_validation():
    with pytest.raises(InputError):
        FieldNoiseSpec((0, 0, 2), lambda w: 1.0)
    with pytest.raises(InputError):
        FieldNoiseSpec((0, 0, 1), [(1.0, -1.0)])
    spec = FieldNoiseSpec((0, 0, 1), [(1.0, 1.0), (2.0, 3.0)])
    assert spec(1.5) == pytest.approx(2.0)
    with pytest.raises(InputError):
        spec(5.0)


def test_radiation_pressure_force():
    la = laser(1.0, -0.5, wl=397e-9)
    f = radiation_pressure_force(la)
    assert np.linalg.norm(f) == pytest.approx(3.4e-20, rel=0.2)
    assert np.linalg.norm(f) == pytest.approx(HBAR * TWO_PI / 397e-9 * scattering_rate(la), rel=1e-14)
    assert np.linalg.norm(radiation_pressure_force(laser(1e-12, -0.5))) < 1e-30


def test_gate_infidelity():
    assert gate_infidelity(0.25, 0.0) == 0.0
    assert gate_infidelity(0.25, 0.01) == pytest.approx(1.17e-4, rel=5e-3)
    assert nbar_for_infidelity(0.05, 1e-4) == pytest.approx(1.88, abs=0.01)


@settings(max_examples=40, deadline=None)
@given(eta=st.floats(0.01, 0.5), n=st.floats(1e-3, 5.0), d=st.floats(1e-3, 0.5))
def test_gate_infidelity_monotone(eta, n, d):
    assert gate_infidelity(eta + d, n) > gate_infidelity(eta, n)
    assert gate_infidelity(eta, n + d) > gate_infidelity(eta, n)


def test_carrier_factor():
    assert carrier_rabi_factor([0.0], [0]) == 1.0
    assert carrier_rabi_factor([0.18], [17]) == pytest.approx(0.433, abs=0.001)
    assert carrier_rabi_factor([0.18], [0]) == pytest.approx(0.984, abs=0.001)
    with pytest.warns(ModelAssumptionWarning):
        warnings.simplefilter("always", ModelAssumptionWarning)
        carrier_rabi_factor([0.5], [3])


def test_rate_report(table_trap):
    ms = solve_modes(table_trap, (BE9, MG24))
    la = laser(0.1, -0.5, gamma=TWO_PI * 19.4e6)
    rep = rate_report(ms, la, 0)
    rows = {r["label"]: r for r in rep["modes"]}
    assert rows["z-ip"]["cooling_rate_n0_quanta_per_s"] < 0
    assert rows["x-oop"]["eta"] == 0.0
    with pytest.raises(ModelAssumptionError):
        rate_report(ms, laser(0.1, -0.5, gamma=TWO_PI * 5e6), 0)
    assert rate_report(ms, laser(0.1, -0.5, gamma=TWO_PI * 5e6), 0, force=True)["modes"]


def test_radial_mg_modes_barely_cooled_by_be_beam(table_trap):
    # beam along x on Be: the Mg-dominated x mode has |e'_Be| = 0.018
    ms = solve_modes(table_trap, (BE9, MG24))
    la = laser(0.1, -0.5, direction=(1, 0, 0), gamma=TWO_PI * 19.4e6)
    be_mode = doppler_rate(ms, la, 0, find_mode(ms, "x", "ip"), 0.0)
    mg_mode = doppler_rate(ms, la, 0, find_mode(ms, "x", "oop"), 0.0)
    assert abs(mg_mode) < 1e-3 * abs(be_mode)


def test_laser_round_trip():
    la = laser(0.4, -0.5)
    assert LaserField.from_dict(la.to_dict()) == la
    d = la.to_dict()
    d.pop("rabi_frequency_rad_per_s")
    d["saturation"] = 0.4
    assert LaserField.from_dict(d).saturation == pytest.approx(0.4, rel=1e-12)
    with pytest.raises(InputError):
        LaserField.from_dict({"wavevector_rad_per_m": [0, 0, 1]})
