"""Multi-step protocols, Monte Carlo driver and protocol files."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

from ..errors import InputError
from .readout import DetectionModel, detect, run_qnd_readout, run_schmidt_readout
from .state import (
    InternalLevelSet,
    JointState,
    Pulse,
    apply_pulse,
    cool_to_ground,
    displacement_operator,
)

SCHEMA_VERSION = 1

# Relative Gaussian pulse-area noise used by default for the noisy Dicke run.
DEFAULT_DICKE_INTENSITY_NOISE = 0.2


# ---------------------------------------------------------------------------
# Monte Carlo plumbing


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trajectory ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def run_trajectories(fn: Callable, n: int, seed: int, *, workers: int | None = None) -> list:
    """Evaluate ``fn(index, rng)`` for ``n`` trajectories.

    Each trajectory owns a stream derived from (seed, index), so results do
    not depend on ``workers`` or scheduling.
    """
    if n < 1:
        raise InputError("need at least one trajectory")

    def one(i):
        return fn(i, trajectory_rng(seed, i))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(n)))
    return [one(i) for i in range(n)]


# ---------------------------------------------------------------------------
# Dicke state


SPEC_ION = InternalLevelSet("Al", ("S", "P"))
MG1 = InternalLevelSet("Mg1", ("down", "up"))
MG2 = InternalLevelSet("Mg2", ("down", "up"))


def ideal_dicke_state(n_max: int) -> JointState:
    """|P> (|down,up> + |up,down>)/sqrt 2 |0>."""
    amp = np.zeros((2, 2, 2, n_max + 1), complex)
    amp[1, 0, 1, 0] = amp[1, 1, 0, 0] = 1.0 / math.sqrt(2.0)
    return JointState((SPEC_ION, MG1, MG2), amp)


def run_dicke_preparation(
    eta: tuple[float, float] = (0.1, 0.1),
    *,
    eta_spec: float = 0.1,
    nbar: float = 0.0,
    intensity_noise: float = 0.0,
    rng=None,
    n_max: int = 10,
) -> tuple[JointState, float]:
    """Herald one motional quantum and share it between two logic ions.

    Sequence: cool the mode (thermal ``nbar``); blue sideband pi on the
    spectroscopy ion; simultaneous red sideband on both logic ions with
    angle pi/sqrt 2, which moves the single quantum completely into the
    symmetric one-excitation state.  Pulse areas fluctuate by a common
    relative Gaussian factor of width ``intensity_noise`` per pulse.
    Returns the final state and its fidelity with the ideal target.
    """
    eta = tuple(float(e) for e in eta)
    if len(eta) != 2 or min(eta) <= 0:
        raise InputError("need two positive logic-ion eta values")
    if abs(eta[0] - eta[1]) > 1e-12 * max(eta):
        warnings.warn("unequal logic-ion coupling: the Dicke state is prepared imperfectly", stacklevel=2)
    stochastic = nbar > 0 or intensity_noise > 0
    if stochastic and rng is None:
        raise InputError("an rng is required with thermal motion or intensity noise")
    state = JointState.basis((SPEC_ION, MG1, MG2), ("S", "down", "down"), 0, n_max)
    if nbar > 0:
        state = cool_to_ground(state, rng, nbar=nbar)

    def area(theta):
        if intensity_noise == 0:
            return theta
        return theta * (1.0 + intensity_noise * rng.standard_normal())

    state = apply_pulse(state, Pulse("blue_sideband", ("Al",), area(math.pi), (eta_spec,), (("S", "P"),)))
    state = apply_pulse(
        state,
        Pulse(
            "red_sideband",
            ("Mg1", "Mg2"),
            area(math.pi / math.sqrt(2.0)),
            eta,
            (("down", "up"), ("down", "up")),
        ),
    )
    return state, state.fidelity(ideal_dicke_state(n_max))


def dicke_fidelity_mc(trajectories: int, seed: int, *, workers: int | None = None, **kwargs) -> float:
    kwargs.setdefault("intensity_noise", DEFAULT_DICKE_INTENSITY_NOISE)
    vals = run_trajectories(
        lambda i, rng: run_dicke_preparation(rng=rng, **kwargs)[1], trajectories, seed, workers=workers
    )
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# pumping ladder


def ladder_levels(steps: int) -> InternalLevelSet:
    """S_0 ... S_L ground levels and P_0 ... P_{L-1} auxiliary levels."""
    if steps < 1:
        raise InputError("ladder needs at least one step")
    return InternalLevelSet("Al", tuple(f"S{k}" for k in range(steps + 1)) + tuple(f"P{k}" for k in range(steps)))


def run_pumping_ladder(
    steps: int,
    rng=None,
    *,
    angle_error: float = 0.0,
    eta: float = 0.1,
    nbar: float = 0.0,
    n_max: int = 6,
) -> dict[str, float]:
    """Irreversible transfer S_0 -> S_L.

    Each step k applies a carrier pi on S_k<->P_k, a red-sideband pi on
    S_{k+1}<->P_k (which adds one motional quantum) and then re-cools the
    mode, which makes the transfer one-way.  Returns the final level
    populations of this trajectory.
    """
    levels = ladder_levels(steps)
    if (angle_error > 0 or nbar > 0) and rng is None:
        raise InputError("an rng is required with pulse errors or thermal motion")
    rng = rng if rng is not None else np.random.default_rng(0)
    state = JointState.basis((levels,), ("S0",), 0, n_max)

    def area():
        if angle_error == 0:
            return math.pi
        return math.pi * (1.0 + angle_error * rng.standard_normal())

    for k in range(steps):
        state = apply_pulse(state, Pulse("carrier", ("Al",), area(), (), ((f"S{k}", f"P{k}"),)))
        state = apply_pulse(state, Pulse("red_sideband", ("Al",), area(), (eta,), ((f"S{k + 1}", f"P{k}"),)))
        state = cool_to_ground(state, rng, nbar=nbar)
    return state.level_populations("Al")


def pumping_ladder_mc(steps: int, trajectories: int, seed: int, **kwargs) -> dict[str, float]:
    runs = run_trajectories(lambda i, rng: run_pumping_ladder(steps, rng, **kwargs), trajectories, seed)
    keys = runs[0].keys()
    return {k: float(np.mean([r[k] for r in runs])) for k in keys}


# ---------------------------------------------------------------------------
# comb-driven Raman transitions


def comb_raman_frequencies(omega_rep: float, omega_shift: float, dn_max: int) -> list[float]:
    """Raman difference frequencies dn * omega_rep + omega_shift, dn = 0..dn_max."""
    if not omega_rep > 0:
        raise InputError("repetition rate must be positive")
    if dn_max < 0 or int(dn_max) != dn_max:
        raise InputError("dn_max must be a non-negative integer")
    return [dn * omega_rep + omega_shift for dn in range(int(dn_max) + 1)]


# ---------------------------------------------------------------------------
# sideband spectroscopy beyond the Lamb-Dicke approximation


def _lamb_dicke_hamiltonian(delta, omega_mode, eta, rabi, nf, pad=30):
    big = nf + pad
    a = np.diag(np.sqrt(np.arange(1, big)), 1)
    c = expm(1j * eta * (a + a.T))[:nf, :nf]
    num = np.diag(np.arange(nf, dtype=float))
    eye = np.eye(nf)
    # basis ordering: (g, n) then (e, n)
    h = np.zeros((2 * nf, 2 * nf), complex)
    h[:nf, :nf] = omega_mode * num + 0.5 * delta * eye
    h[nf:, nf:] = omega_mode * num - 0.5 * delta * eye
    h[nf:, :nf] = 0.5 * rabi * c
    h[:nf, nf:] = 0.5 * rabi * c.conj().T
    return h


def sideband_excitation(
    delta: float, omega_mode: float, eta: float, rabi: float, duration: float, *, n_init: int = 1, n_max: int = 8
) -> float:
    """Upper-level probability after a square pulse of laser detuning ``delta``
    (rad/s) on ``|g, n_init>``, with the full exp(i eta (a + a^dag)) coupling."""
    nf = n_max + 1
    h = _lamb_dicke_hamiltonian(delta, omega_mode, eta, rabi, nf)
    psi = np.zeros(2 * nf, complex)
    psi[n_init] = 1.0
    out = expm(-1j * h * duration) @ psi
    return float(np.sum(np.abs(out[nf:]) ** 2))


def sideband_line_centers(
    omega_mode: float, eta: float, rabi: float, *, n_init: int = 1, n_max: int = 8
) -> tuple[float, float]:
    """Detunings of the red and blue sideband resonances found by maximizing
    the simulated excitation around -omega_mode and +omega_mode."""
    duration = math.pi / (rabi * eta * math.sqrt(max(n_init, 1)))
    half_width = 2.0 * math.pi / duration

    def center(sign):
        res = minimize_scalar(
            lambda d: -sideband_excitation(d, omega_mode, eta, rabi, duration, n_init=n_init, n_max=n_max),
            bounds=(sign * omega_mode - half_width, sign * omega_mode + half_width),
            method="bounded",
            options={"xatol": 1e-10 * omega_mode},
        )
        return float(res.x)

    return center(-1.0), center(+1.0)


# ---------------------------------------------------------------------------
# protocol files


PROTOCOLS = ("qnd", "schmidt", "dicke", "pumping", "sequence")


def _get(params: dict, key: str, default=None, cast=float):
    if key not in params:
        if default is None:
            raise InputError(f"protocol parameter {key!r} missing")
        return default
    try:
        return cast(params[key])
    except (TypeError, ValueError):
        raise InputError(f"protocol parameter {key!r} is invalid") from None


def _run_qnd(p: dict, seed: int, n: int, workers):
    model = DetectionModel.from_dict(p.get("detection", {"lambda_bright": 10.0, "lambda_dark": 0.1}))
    p_des = _get(p, "p_des")
    max_rounds = _get(p, "max_rounds", 100, int)
    fidelity = _get(p, "mapping_fidelity")
    lifetime = _get(p, "lifetime_s")
    round_s = _get(p, "round_duration_s")
    decay = bool(p.get("decay", True))
    states = p.get("true_states", ["S", "P0"])

    def one(i, rng):
        return run_qnd_readout(
            states[i % len(states)], model, p_des, max_rounds, fidelity, lifetime, round_s, rng, decay=decay
        )

    recs = run_trajectories(one, n, seed, workers=workers)
    max_len = max(r.rounds for r in recs)
    # stopped-process mean posterior of the true state per round
    hist = np.zeros(max_len)
    for r in recs:
        t = r.candidates.index(r.true_state)
        traj = [post[t] for post in r.posteriors]
        traj += [traj[-1]] * (max_len - len(traj))
        hist += np.array(traj)
    out = {
        "accuracy": float(np.mean([r.correct for r in recs])),
        "error_rate": float(np.mean([not r.correct for r in recs])),
        "mean_rounds": float(np.mean([r.rounds for r in recs])),
        "timed_out_fraction": float(np.mean([r.timed_out for r in recs])),
        "mean_true_posterior_by_round": (hist / len(recs)).tolist(),
    }
    if n == 1:
        out["record"] = recs[0].to_dict()
    return out


def _run_schmidt(p: dict, seed: int, n: int, workers):
    model = DetectionModel.from_dict(p.get("detection", {"lambda_bright": 10.0, "lambda_dark": 0.1}))
    nbar = _get(p, "nbar_init", 0.0)
    err = _get(p, "angle_error", 0.0)
    states = p.get("true_states", ["g", "e"])
    res = run_trajectories(
        lambda i, rng: run_schmidt_readout(states[i % len(states)], rng, nbar_init=nbar, angle_error=err, model=model),
        n,
        seed,
        workers=workers,
    )
    out = {"accuracy": float(np.mean([r.correct for r in res]))}
    if n == 1:
        out["record"] = res[0].to_dict()
    return out


def _run_dicke(p: dict, seed: int, n: int, workers):
    eta = tuple(p.get("eta", (0.1, 0.1)))
    nbar = _get(p, "nbar", 0.0)
    noise = _get(p, "intensity_noise", 0.0)
    vals = run_trajectories(
        lambda i, rng: run_dicke_preparation(eta, nbar=nbar, intensity_noise=noise, rng=rng)[1],
        n,
        seed,
        workers=workers,
    )
    return {"mean_fidelity": float(np.mean(vals)), "fidelities": [float(v) for v in vals] if n == 1 else None}


def _run_pumping(p: dict, seed: int, n: int, workers):
    steps = _get(p, "steps", cast=int)
    err = _get(p, "angle_error", 0.0)
    runs = run_trajectories(lambda i, rng: run_pumping_ladder(steps, rng, angle_error=err), n, seed, workers=workers)
    pops = {k: float(np.mean([r[k] for r in runs])) for k in runs[0]}
    return {"populations": pops, "target_population": pops[f"S{steps}"]}


def _run_sequence(p: dict, seed: int, n: int, workers):
    try:
        ions = tuple(InternalLevelSet.from_dict(d) for d in p["ions"])
        initial = p["initial_levels"]
        pulses = [Pulse.from_dict(d) for d in p["pulses"]]
    except (KeyError, TypeError) as exc:
        raise InputError(f"invalid sequence protocol: {exc}") from None
    n_max = _get(p, "n_max", 10, int)
    n0 = _get(p, "initial_n", 0, int)
    det = p.get("detect")
    model = DetectionModel.from_dict(det["model"]) if det else None

    def one(i, rng):
        s = JointState.basis(ions, initial, n0, n_max)
        for pulse in pulses:
            if pulse.kind == "displacement":
                s = s.with_amplitudes(
                    np.tensordot(s.amplitudes, displacement_operator(pulse.alpha, n_max + 1), axes=([-1], [1]))
                )
            else:
                s = apply_pulse(s, pulse)
        row = {ls.ion: s.level_populations(ls.ion) for ls in ions}
        if model is not None:
            count, _, level = detect(s, det["ion"], model, rng)
            row["count"] = count
            row["level"] = level
        return row

    rows = run_trajectories(one, n, seed, workers=workers)
    out = {"final_populations": rows[0] if n == 1 else None}
    if model is not None:
        out["mean_count"] = float(np.mean([r["count"] for r in rows]))
        out["counts"] = [r["count"] for r in rows] if n <= 1000 else None
    else:
        out["final_populations"] = rows[0]
    return out


_RUNNERS = {
    "qnd": _run_qnd,
    "schmidt": _run_schmidt,
    "dicke": _run_dicke,
    "pumping": _run_pumping,
    "sequence": _run_sequence,
}


def run_protocol(doc: dict, *, seed: int | None = None, trajectories: int | None = None, workers=None) -> dict:
    """Run a protocol document; command-line values override those in the file."""
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise InputError("protocol document needs schema_version 1")
    kind = doc.get("protocol")
    if kind not in _RUNNERS:
        raise InputError(f"unknown protocol {kind!r}; expected one of {PROTOCOLS}")
    params = doc.get("parameters", {})
    if not isinstance(params, dict):
        raise InputError("parameters must be an object")
    seed = int(doc.get("seed", 0) if seed is None else seed)
    n = int(doc.get("trajectories", 1) if trajectories is None else trajectories)
    if n < 1:
        raise InputError("trajectories must be >= 1")
    result = _RUNNERS[kind](params, seed, n, workers)
    return {"protocol": kind, "parameters": params, "seed": seed, "trajectories": n, "result": result}


__all__ = [
    "DEFAULT_DICKE_INTENSITY_NOISE",
    "comb_raman_frequencies",
    "dicke_fidelity_mc",
    "ideal_dicke_state",
    "ladder_levels",
    "pumping_ladder_mc",
    "run_dicke_preparation",
    "run_protocol",
    "run_pumping_ladder",
    "run_trajectories",
    "sideband_excitation",
    "sideband_line_centers",
    "trajectory_rng",
]
