import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from conftest import isotropic_static_trap
from ionchain import chain
from ionchain.chain import (
    compensate_stray_field,
    extract_mode_frequency,
    find_equilibrium,
    find_mode,
    ground_state_extent,
    lamb_dicke,
    normal_modes,
    order_dependent_shift,
    potential_energy,
    potential_terms,
    radiation_pressure_displacement,
    scan_field,
    solve_modes,
)
from ionchain.constants import COULOMB_K, ELEMENTARY_CHARGE, EPSILON_0, HBAR, TWO_PI
from ionchain.cooling import wavevector
from ionchain.errors import ContinuationError, InputError, InstabilityError, UnstableModeError
from ionchain.qls.protocols import sideband_line_centers
from ionchain.trap import BE9, CA40, MG24, IonSpecies, TrapModel

E = ELEMENTARY_CHARGE


def test_two_ion_separation_and_symmetry():
    trap = isotropic_static_trap(CA40, 1e6, 5e6)
    cfg = find_equilibrium(trap, (CA40, CA40))
    w = TWO_PI * 1e6
    d = (E * E / (2 * math.pi * EPSILON_0 * CA40.mass * w * w)) ** (1 / 3)
    z = cfg.positions[:, 2]
    assert z[1] - z[0] == pytest.approx(d, rel=1e-9)
    assert abs(z[0] + z[1]) < 1e-15
    assert cfg.converged and cfg.gradient_norm < 2e-22


def test_be_mg_on_axis(table_trap):
    cfg = find_equilibrium(table_trap, (BE9, MG24))
    assert np.max(np.abs(cfg.positions[:, :2])) < 1e-12
    assert cfg.order == ("Be", "Mg")


def test_energy_below_seed(table_trap):
    seed = chain.default_seed(table_trap, (BE9, MG24, BE9)) * 1.7
    cfg = find_equilibrium(table_trap, (BE9, MG24, BE9), seed)
    assert cfg.potential_energy <= potential_energy(table_trap, (BE9, MG24, BE9), seed)


def test_unstable_trap_rejected():
    trap = TrapModel(rf_coeff=[0, 0, 0], static_coeff=[-1e-12, 1e-12, 1e-12])
    with pytest.raises(InstabilityError):
        find_equilibrium(trap, (BE9,))


def test_escape_raises_continuation_error():
    # weak axial confinement: a huge axial field pushes the ion past 1 mm
    trap = isotropic_static_trap(BE9, 0.05e6, 5e6).with_field([0, 0, 1e5])
    with pytest.raises(ContinuationError):
        find_equilibrium(trap, (BE9,))


def _central_fd_hessian(trap, species, x, h=1e-9):
    n = x.size
    H = np.zeros((n, n))
    flat = x.ravel()
    for i in range(n):
        for s in (+1, -1):
            y = flat.copy()
            y[i] += s * h
            _, g, _ = potential_terms(trap, species, y.reshape(-1, 3))
            H[:, i] += s * g.ravel() / (2 * h)
    return 0.5 * (H + H.T)


def _random_chain(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    species = tuple(IonSpecies(f"S{j}", float(rng.uniform(9, 36))) for j in range(n))
    m0 = 9.0 * 1.66e-27
    w = TWO_PI * np.array([rng.uniform(4, 8), rng.uniform(4, 8), rng.uniform(0.5, 1.5)]) * 1e6
    trap = TrapModel(
        rf_coeff=[m0 * m0 * w[0] ** 2 * 4, m0 * m0 * w[1] ** 2 * 4, 0.0],
        static_coeff=[-0.5 * m0 * w[2] ** 2, -0.5 * m0 * w[2] ** 2, m0 * w[2] ** 2],
        uniform_field=rng.normal(scale=30, size=3),
    )
    return trap, species


def fd_oracle_max_error(seed):
    trap, species = _random_chain(seed)
    cfg = find_equilibrium(trap, species)
    modes = normal_modes(trap, cfg)
    H = _central_fd_hessian(trap, species, cfg.positions)
    inv = 1 / np.sqrt(np.repeat(cfg.masses, 3))
    w2 = np.sort(np.linalg.eigvalsh(H * inv[:, None] * inv[None, :]))
    f_fd = np.sqrt(np.abs(w2))
    f = np.sqrt(np.abs(modes.eigenvalues))
    return float(np.max(np.abs(f - f_fd) / f))


@pytest.mark.parametrize("seed", range(20))
def test_hessian_matches_finite_differences(seed):
    assert fd_oracle_max_error(seed) < 1e-6


@pytest.mark.parametrize("seed", range(6))
def test_mode_set_invariants(seed):
    trap, species = _random_chain(100 + seed)
    ms = solve_modes(trap, species)
    v = ms.eigenvectors
    assert np.max(np.abs(v.T @ v - np.eye(len(v)))) < 1e-9
    hn = np.linalg.norm(ms.hessian, 2)
    assert np.all(ms.residuals() <= 1e-9 * hn)
    assert np.all(np.diff(ms.eigenvalues) >= 0)
    for a in range(ms.n_modes):
        col = v[:, a]
        k = int(np.argmax(np.abs(col)))
        top = np.flatnonzero(np.isclose(np.abs(col), abs(col[k]), rtol=0, atol=1e-12))
        assert col[top[0]] > 0


@pytest.mark.parametrize("seed", range(4))
def test_mirror_symmetry(seed):
    trap, species = _random_chain(200 + seed)
    trap = trap.with_field([0, 0, 0])
    f1 = np.sort(solve_modes(trap, species).eigenvalues)
    f2 = np.sort(solve_modes(trap, species[::-1]).eigenvalues)
    assert np.allclose(f1, f2, rtol=1e-9, atol=0)


def test_equal_mass_com_mode():
    trap = isotropic_static_trap(CA40, 0.8e6, 5e6)
    for n in (2, 3, 4):
        ms = solve_modes(trap, (CA40,) * n)
        a = find_mode(ms, "z", "ip")
        assert ms.frequencies_hz[a] == pytest.approx(0.8e6, rel=1e-9)


def test_sqrt3_ratio():
    trap = isotropic_static_trap(CA40, 1e6, 5e6)
    ms = solve_modes(trap, (CA40, CA40))
    r = ms.frequencies[find_mode(ms, "z", "oop")] / ms.frequencies[find_mode(ms, "z", "ip")]
    assert abs(r / math.sqrt(3) - 1) < 1e-9


def test_table_segregation(table_trap):
    ms = solve_modes(table_trap, (BE9, MG24))
    for axis in "xy":
        for phase in ("ip", "oop"):
            v = ms.vector(find_mode(ms, axis, phase))
            # compared at three displayed decimals
            comp = np.round(np.abs(v[:, "xyz".index(axis)]), 3)
            assert comp.min() <= 0.020 and comp.max() >= 0.999


def test_ground_state_extent_single_ion():
    trap = isotropic_static_trap(CA40, 1e6, 5e6)
    ms = solve_modes(trap, (CA40,))
    _, norm = ground_state_extent(ms, 0, find_mode(ms, "z", "ip"))
    assert norm == pytest.approx(11.2e-9, abs=0.1e-9)


def test_ground_state_extent_mg_component(table_trap):
    ms = solve_modes(table_trap, (BE9, MG24))
    a = find_mode(ms, "z", "ip")
    comps, _ = ground_state_extent(ms, 1, a)
    w = ms.frequencies[a]
    expect = math.sqrt(HBAR / (2 * MG24.mass * w)) * abs(ms.vector(a)[1, 2])
    assert comps[2] == pytest.approx(expect, rel=1e-12)
    assert comps[0] == 0.0


def test_lamb_dicke_two_ways():
    trap = isotropic_static_trap(BE9, 1.9e6, 8e6)
    ms = solve_modes(trap, (BE9,))
    a = find_mode(ms, "z", "ip")
    k = wavevector(313e-9)
    eta = lamb_dicke(ms, k, 0, a)
    e_r = HBAR**2 * (TWO_PI / 313e-9) ** 2 / (2 * BE9.mass)
    assert eta == pytest.approx(math.sqrt(e_r / (HBAR * TWO_PI * 1.9e6)), rel=1e-12)
    assert lamb_dicke(ms, wavevector(313e-9, (1, 0, 0)), 0, a) == 0.0


def test_unstable_mode_errors():
    ms = solve_modes(isotropic_static_trap(BE9, 1e6, 5e6), (BE9,))
    bad = chain.NormalModeSet(ms.config, -ms.eigenvalues, ms.eigenvectors, ms.hessian)
    with pytest.raises(UnstableModeError):
        lamb_dicke(bad, wavevector(313e-9), 0, 0)


def test_extract_mode_frequency():
    assert extract_mode_frequency(-3.0, 3.0) == 3.0
    assert extract_mode_frequency(-3.0 + 0.7, 3.0 + 0.7) == pytest.approx(3.0)
    with pytest.raises(InputError):
        extract_mode_frequency(1.0, 1.0)


def test_extract_from_simulated_spectrum():
    w = TWO_PI * 1.0e6
    red, blue = sideband_line_centers(w, 0.1, w * 5e-4)
    assert extract_mode_frequency(red, blue) == pytest.approx(w, rel=1e-6)


def test_scan_zero_point_and_200_v_per_m(table_trap):
    scan = scan_field(table_trap, (BE9, MG24), "y", [0.0, 100.0, 200.0])
    base = solve_modes(table_trap, (BE9, MG24))
    assert np.allclose(np.sort(scan.frequencies[0]), np.sort(base.frequencies_hz), rtol=1e-12)
    expect = np.array([12.11, 11.06, 4.67, 4.04, 3.42, 1.89])
    assert np.allclose(np.sort(scan.frequencies[-1])[::-1] / 1e6, expect, atol=0.01)


def test_scan_parallel_equals_sequential(table_trap):
    vals = np.linspace(-100, 100, 9)
    a = scan_field(table_trap, (BE9, MG24), "y", vals)
    b = scan_field(table_trap, (BE9, MG24), "y", vals, workers=4)
    assert np.array_equal(a.frequencies, b.frequencies)


def test_scan_rejects_non_monotone(table_trap):
    with pytest.raises(InputError):
        scan_field(table_trap, (BE9, MG24), "y", [0.0, 2.0, 1.0])


def test_y_oop_extremum_at_zero(table_trap):
    vals = np.linspace(-300, 300, 61)
    scan = scan_field(table_trap, (BE9, MG24), "y", vals)
    col = scan.labels.index("y-oop")
    curve = scan.column(col)
    assert vals[int(np.argmax(curve))] == 0.0
    # even in the field for this trap
    assert np.max(np.abs(curve - curve[::-1])) / 1e6 < 1e-6


@pytest.mark.parametrize("stray", [0.0, 100.0])
def test_compensation(table_trap, stray):
    res = compensate_stray_field(table_trap.with_field([0, stray, 0]), (BE9, MG24))
    assert res.field + stray == pytest.approx(0.0, abs=2.0)
    assert res.mode_label == "y-oop"


def test_order_shift_zero_without_perturbation(table_trap):
    r = order_dependent_shift(table_trap, (BE9, MG24))
    assert np.all(np.abs(r.delta_hz) <= 1e-6 * r.frequencies_ab)


def test_gradient_separation_force_balance(table_trap):
    g = 0.2 * E
    trap = table_trap.replace(axial_gradient=g)
    r = order_dependent_shift(trap, (BE9, MG24))
    k_be, k_mg = trap.spring_constants(BE9)[2], trap.spring_constants(MG24)[2]
    m_ref = trap.reference_mass

    def separation(order_sign):
        # ions at z1 < z2; force balance on each along z, solved for z1, z2
        f_be = -(m_ref / BE9.mass) * g
        f_mg = -(m_ref / MG24.mass) * g
        k1, f1, k2, f2 = (k_be, f_be, k_mg, f_mg) if order_sign > 0 else (k_mg, f_mg, k_be, f_be)

        def resid(d):
            c = COULOMB_K * E * E / d**2
            z1 = (f1 - c) / k1
            z2 = (f2 + c) / k2
            return z2 - z1 - d

        return brentq(resid, 1e-7, 1e-4, xtol=1e-18)

    assert r.separation_ab == pytest.approx(separation(+1), rel=1e-9)
    assert r.separation_ba == pytest.approx(separation(-1), rel=1e-9)


def test_radiation_pressure_trivial_and_oracle():
    trap = isotropic_static_trap(CA40, 1e6, 5e6)
    cfg = find_equilibrium(trap, (CA40, CA40))
    zero = radiation_pressure_displacement(trap, cfg, [0, 0, 0], 0)
    assert zero.numerical_factor == 1.0 and zero.analytic_factor == 1.0
    f = 1e-3 * cfg.positions[1, 2] * 2 * trap.spring_constants(CA40)[2]  # eps/d = 1e-3
    res = radiation_pressure_displacement(trap, cfg, [0, 0, f], 0)
    assert res.epsilon / res.separation == pytest.approx(1e-3, rel=1e-9)
    assert abs(res.numerical_factor / res.first_order_factor - 1) < 1e-6


def test_radiation_pressure_unequal_masses(table_trap):
    cfg = find_equilibrium(table_trap, (BE9, MG24))
    res = radiation_pressure_displacement(table_trap, cfg, [0, 0, 1e-20], 0)
    assert math.isnan(res.analytic_factor)
    assert res.numerical_factor > 1
