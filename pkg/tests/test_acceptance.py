"""Acceptance criteria, one test per criterion.

Each test is tagged with ``criterion(n, title)``; the conftest hooks print a
PASS/FAIL line per criterion at the end of the run.  Tolerances are the
stated ones and are not widened here.
"""

import io
import json
import math
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

import test_chain as chain_checks
import test_qls as qls_checks
from conftest import BE_FREQS, MG_FREQS, isotropic_static_trap
from ionchain.chain import (
    field_for_shift,
    find_equilibrium,
    find_mode,
    ground_state_extent,
    order_dependent_shift,
    radiation_pressure_displacement,
    solve_modes,
)
from ionchain.cli import run as cli_run
from ionchain.constants import ELEMENTARY_CHARGE, HBAR, TWO_PI
from ionchain.cooling import (
    FieldNoiseSpec,
    LaserField,
    ModelAssumptionWarning,
    anomalous_heating_rate,
    carrier_rabi_factor,
    doppler_equilibrium_from_coupling,
    mode_coupling,
    nbar_for_infidelity,
    radiation_pressure_force,
    wavevector,
)
from ionchain.qls.protocols import run_dicke_preparation, run_trajectories
from ionchain.qls.readout import DetectionModel, run_qnd_readout
from ionchain.qls.state import InternalLevelSet, JointState, Pulse, apply_pulse
from ionchain.reorder import (
    benchmark_traps,
    critical_radial_field,
    enumerate_orders,
    run_asymmetric_reorder,
    run_symmetric_reorder,
)
from ionchain.trap import BE9, CA40, MG24, ClampWarning, fit_trap_from_reference

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# rows in descending frequency: (f/MHz, Be x y z, Mg x y z)
REFERENCE_MODES = [
    (12.11, [1.000, 0, 0, 0.018, 0, 0]),
    (11.03, [0, 1.000, 0, 0, 0.020, 0]),
    (4.68, [0.018, 0, 0, -1.000, 0, 0]),
    (4.04, [0, 0, -0.926, 0, 0, 0.378]),
    (3.53, [0, 0.020, 0, 0, -1.000, 0]),
    (1.90, [0, 0, 0.378, 0, 0, 0.926]),
]
FIELD_MODES = [
    (12.11, [1.000, 0, 0, 0.018, 0, 0]),
    (11.06, [0, -0.999, 0.024, 0, -0.016, -0.014]),
    (4.67, [0.018, 0, 0, -1.000, 0, 0]),
    (4.04, [0, -0.017, -0.817, 0, -0.470, 0.334]),
    (3.42, [0, -0.027, -0.450, 0, 0.882, 0.137]),
    (1.89, [0, -0.005, 0.360, 0, 0.038, 0.932]),
]


def crit(number, title):
    return pytest.mark.criterion(number, title)


def _rows_descending(ms):
    order = np.argsort(ms.frequencies_hz)[::-1]
    return [(ms.frequencies_hz[a] / 1e6, ms.eigenvectors[:, a]) for a in order]


def _table_errors(ms, table):
    """Largest frequency error (MHz) and eigenvector-entry error, each mode
    compared up to its overall sign."""
    f_err = v_err = 0.0
    for (f, v), (f_ref, v_ref) in zip(_rows_descending(ms), table):
        v_ref = np.asarray(v_ref)
        f_err = max(f_err, abs(f - f_ref))
        v_err = max(v_err, min(np.max(np.abs(v - v_ref)), np.max(np.abs(v + v_ref))))
    return f_err, v_err


@crit(1, "Be-Mg modes from the fitted trap")
def test_c01_reference_modes(record_property):
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClampWarning)
        trap = fit_trap_from_reference(BE9, BE_FREQS, MG24, MG_FREQS)
    ms = solve_modes(trap, (BE9, MG24))
    elapsed = time.perf_counter() - t0
    f_err, v_err = _table_errors(ms, REFERENCE_MODES)
    record_property("detail", f"max df={f_err:.4f} MHz, max de={v_err:.4f}, {elapsed * 1e3:.0f} ms")
    assert f_err <= 0.01
    assert v_err <= 0.005
    assert elapsed < 1.0


@crit(2, "Be-Mg modes at 200 V/m along y")
def test_c02_modes_at_200_v_per_m(table_trap, record_property):
    ms = solve_modes(table_trap.with_field([0, 200, 0]), (BE9, MG24))
    f_err, v_err = _table_errors(ms, FIELD_MODES)
    record_property("detail", f"max df={f_err:.4f} MHz, max de={v_err:.4f}")
    assert f_err <= 0.01
    assert v_err <= 0.01


@crit(3, "equal-mass axial oop/ip ratio is sqrt 3")
def test_c03_sqrt3(record_property):
    ms = solve_modes(isotropic_static_trap(CA40, 1e6, 5e6), (CA40, CA40))
    r = ms.frequencies[find_mode(ms, "z", "oop")] / ms.frequencies[find_mode(ms, "z", "ip")]
    rel = abs(r / math.sqrt(3) - 1)
    record_property("detail", f"relative error {rel:.1e}")
    assert rel < 1e-9


@crit(4, "analytic vs finite-difference Hessian on 20 random chains")
def test_c04_hessian_oracle(record_property):
    worst = max(chain_checks.fd_oracle_max_error(seed) for seed in range(20))
    record_property("detail", f"worst relative frequency error {worst:.1e}")
    assert worst < 1e-6


@crit(5, "radiation-pressure worked example")
def test_c05_radiation_pressure(record_property):
    gamma = TWO_PI * 20e6
    laser = LaserField.from_saturation(wavevector(397e-9), 1.0, -gamma / 2, gamma)
    force = radiation_pressure_force(laser)
    w = TWO_PI * 1e6
    m = CA40.mass
    trap = isotropic_static_trap(CA40, 1e6, 5e6)
    cfg = find_equilibrium(trap, (CA40, CA40))
    res = radiation_pressure_displacement(trap, cfg, force, 0)
    oop_hz = math.sqrt(3) * 1e6
    shift = oop_hz * abs(res.analytic_factor - 1)
    shift_num = oop_hz * abs(res.numerical_factor - 1)
    single = solve_modes(trap, (CA40,))
    _, extent = ground_state_extent(single, 0, find_mode(single, "z", "ip"))
    record_property(
        "detail",
        f"|F|={np.linalg.norm(force):.3e} N, eps={res.epsilon * 1e9:.2f} nm, "
        f"shift={shift / 1e3:.2f} kHz (re-diagonalized {shift_num / 1e3:.2f} kHz), extent={extent * 1e9:.2f} nm",
    )
    assert np.linalg.norm(force) == pytest.approx(3.4e-20, rel=0.2)
    assert res.epsilon == pytest.approx(np.linalg.norm(force) / (m * w * w), rel=1e-12)
    assert res.epsilon == pytest.approx(13e-9, rel=0.2)
    assert shift == pytest.approx(2e3, rel=0.3)
    assert extent == pytest.approx(11.2e-9, abs=0.1e-9)


@crit(6, "order-dependent axial shifts from gradient and cubic terms")
def test_c06_order_shifts(table_trap, record_property):
    grad = order_dependent_shift(table_trap.replace(axial_gradient=0.2 * ELEMENTARY_CHARGE), (BE9, MG24))
    cubic = order_dependent_shift(table_trap.replace(cubic_scale=230e-6), (BE9, MG24))
    g_shift = abs(grad.shift("z-oop"))
    c_shift = abs(cubic.shift("z-ip"))
    record_property(
        "detail",
        f"gradient z-oop {g_shift:.0f} Hz; cubic z-ip {c_shift:.0f} Hz (z-oop {abs(cubic.shift('z-oop')):.0f} Hz)",
    )
    assert g_shift == pytest.approx(2.5e3, rel=0.3)
    assert c_shift == pytest.approx(20e3, rel=0.3)


@crit(7, "field for a 200 Hz y-oop shift")
def test_c07_stray_field(table_trap, record_property):
    e = field_for_shift(table_trap, (BE9, MG24), "y", 200.0)
    e_200 = field_for_shift(table_trap.with_field([0, 200, 0]), (BE9, MG24), "y", 200.0)
    record_property("detail", f"{e:.2f} V/m from zero field; {e_200:.2f} V/m on top of 200 V/m")
    assert e <= 15.0


@crit(8, "carrier factor at eta 0.18, n 17")
def test_c08_carrier_factor(record_property):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelAssumptionWarning)
        f = carrier_rabi_factor([0.18], [17])
    record_property("detail", f"{f:.4f}")
    assert f == pytest.approx(0.433, abs=0.001)


@crit(9, "gate-infidelity inverse solve")
def test_c09_gate_infidelity(record_property):
    n_a = nbar_for_infidelity(0.25, 1e-4)
    n_b = nbar_for_infidelity(0.05, 1e-4)
    record_property("detail", f"eta 0.25: nbar={n_a:.4f}; eta 0.05: nbar={n_b:.3f} (quoted 1.5, flagged)")
    assert n_a == pytest.approx(0.0086, abs=5e-5)
    assert n_a == pytest.approx(0.01, rel=0.3)
    assert n_b == pytest.approx(1.88, abs=0.01)


@crit(10, "anomalous heating: symmetric oop zero, single-ion formula")
def test_c10_anomalous_heating(record_property):
    s_e = 1e-12
    noise = FieldNoiseSpec((0, 0, 1), lambda w: s_e)
    pair = solve_modes(isotropic_static_trap(CA40, 1e6, 5e6), (CA40, CA40))
    zero = anomalous_heating_rate(pair, find_mode(pair, "z", "oop"), noise)
    single = solve_modes(isotropic_static_trap(CA40, 1e6, 5e6), (CA40,))
    a = find_mode(single, "z", "ip")
    expect = ELEMENTARY_CHARGE**2 * s_e / (4 * HBAR * single.frequencies[a] * CA40.mass)
    got = anomalous_heating_rate(single, a, noise)
    rel = abs(got / expect - 1)
    record_property("detail", f"oop rate {zero}, single-ion relative error {rel:.1e}")
    assert zero == 0.0
    assert rel <= 1e-12


@crit(11, "Doppler limit: projection invariance and band")
def test_c11_doppler_limit(record_property):
    gamma = 20 * TWO_PI * 1e6
    laser = LaserField.from_saturation(wavevector(313e-9), 0.1, -gamma / 2, gamma)
    ms = solve_modes(isotropic_static_trap(BE9, 1e6, 8e6), (BE9,))
    c = mode_coupling(ms, laser, 0, find_mode(ms, "z", "ip"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelAssumptionWarning)
        n0 = doppler_equilibrium_from_coupling(c, laser)
        rel = max(abs(doppler_equilibrium_from_coupling(c.scaled(s), laser) / n0 - 1) for s in (0.1, 0.5, 0.9))
    record_property("detail", f"nbar_ss={n0:.3f}, projection sensitivity {rel:.1e}")
    assert rel < 1e-6
    assert 5 <= n0 <= 15


@crit(12, "QND repeated readout Monte Carlo")
def test_c12_qnd(record_property):
    doc = json.loads((CONFIGS / "qnd_benchmark.json").read_text())
    p = doc["parameters"]
    model = DetectionModel.from_dict(p["detection"])
    n = doc["trajectories"]
    t0 = time.perf_counter()
    recs = run_trajectories(
        lambda i, rng: run_qnd_readout(
            ("S", "P0")[i % 2], model, p["p_des"], p["max_rounds"], p["mapping_fidelity"],
            p["lifetime_s"], p["round_duration_s"], rng,
        ),
        n,
        doc["seed"],
    )
    elapsed = time.perf_counter() - t0
    error = float(np.mean([not r.correct for r in recs]))
    first = float(np.mean([r.candidates[int(np.argmax(r.posteriors[0]))] != r.true_state for r in recs]))
    bad_rounds = qls_checks.martingale_violations(recs)
    record_property(
        "detail",
        f"n={n}, error={error:.4f}, single-round error={first:.4f}, 3-sigma drops={bad_rounds}, {elapsed:.1f} s",
    )
    assert n == 10_000
    assert elapsed < 60
    assert error < 0.01
    assert first == pytest.approx(0.15, abs=0.02)
    assert bad_rounds == []


@crit(13, "pulse engine vs dense propagator")
def test_c13_pulse_oracle(record_property):
    rng = np.random.default_rng(2024)
    pulses = qls_checks.PULSES + [Pulse("displacement", alpha=0.05 + 0.03j)]
    worst = 0.0
    for pulse in qls_checks.PULSES:
        for _ in range(3):
            state = qls_checks.random_state((qls_checks.A, qls_checks.B), 6, rng, top_free=False)
            worst = max(worst, qls_checks.oracle_error(pulse, state))
    s = qls_checks.random_state((qls_checks.A, qls_checks.B), 6, rng)
    amp = s.amplitudes.copy()
    amp[..., 3:] = 0
    s = JointState(s.ions, amp / np.linalg.norm(amp))
    got = apply_pulse(s, pulses[-1], check_leakage=False).amplitudes
    ref = np.tensordot(s.amplitudes, qls_checks.displacement_matrix(7, pulses[-1].alpha), axes=([-1], [1]))
    worst = max(worst, float(np.max(np.abs(got - ref))))
    record_property("detail", f"max amplitude difference {worst:.1e} over {len(pulses)} pulse cases")
    assert worst < 1e-8


@crit(14, "Dicke preparation and red sideband on ground")
def test_c14_dicke(record_property):
    _, fidelity = run_dicke_preparation((0.1, 0.1))
    ion = InternalLevelSet("A", ("g", "e"))
    ground = JointState.basis((ion,), ("g",), 0, 6)
    flipped = apply_pulse(ground, Pulse("red_sideband", ("A",), math.pi, (0.1,), (("g", "e"),)))
    p_flip = flipped.population("A", "e")
    record_property("detail", f"1 - F = {1 - fidelity:.1e}, flip probability {p_flip}")
    assert fidelity >= 1 - 1e-9
    assert p_flip == 0.0


@crit(15, "reordering: benchmark ramp, critical field, twist sign")
def test_c15_reordering(record_property):
    finals = {
        ",".join(s.name for s in order): run_symmetric_reorder(order).final_class
        for order in enumerate_orders((BE9, BE9, MG24, MG24))
    }
    start, _ = benchmark_traps()
    e_c = critical_radial_field(start, (BE9, MG24), "y")
    pos = run_asymmetric_reorder(start, (BE9, MG24), 1200.0, 1e7).final_order
    neg = run_asymmetric_reorder(start, (BE9, MG24), 1200.0, -1e7).final_order
    record_property(
        "detail",
        f"{len(finals)} starts -> {sorted({','.join(c.order) if c.order else c.label for c in finals.values()})}; "
        f"E_c={e_c:.0f} V/m; twist + -> {','.join(pos)}, - -> {','.join(neg)}",
    )
    assert len(finals) == 6
    assert all(c.kind == "linear" and c.order == ("Be", "Mg", "Mg", "Be") for c in finals.values())
    assert e_c == pytest.approx(900.0, rel=0.2)
    assert pos == tuple(reversed(neg)) and pos != neg


def _cli(argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli_run(argv, stdout=out, stderr=err)
    return code, out.getvalue()


CLI_RUNS = [
    ["modes", "--config", "bemg_pair.json"],
    ["modes", "--config", "bemg_pair_200Vm.json"],
    ["scan", "--config", "bemg_pair.json", "--min", "-100", "--max", "200", "--points", "7"],
    ["cooling", "--config", "cooling_be_axial.json"],
    ["qls", "--config", "qnd_benchmark.json", "--trajectories", "300", "--seed", "7"],
    ["reorder", "--config", "reorder_benchmark.json"],
    ["reorder", "--config", "asymmetric_reorder.json"],
    ["reorder", "--config", "asymmetric_subcritical.json"],
]


@crit(16, "byte-identical CLI JSON across reruns")
def test_c16_reproducible_cli(record_property):
    checked = []
    for argv in CLI_RUNS:
        argv = [str(CONFIGS / a) if a.endswith(".json") else a for a in argv] + ["--json"]
        first = _cli(argv)
        second = _cli(argv)
        assert first[0] == 0, argv
        assert first[1] == second[1], argv
        checked.append(argv[0])
    record_property("detail", f"{len(checked)} runs over commands {sorted(set(checked))}")
