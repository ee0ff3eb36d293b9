"""Joint internal-motional pure states and the pulse engine.

A :class:`JointState` stores amplitudes with shape ``(d_1, ..., d_k, n_max+1)``:
one axis per ion (its internal levels) and a final axis for the Fock states
of a single shared mode.

Pulse convention: a pulse of angle ``theta`` applies
``exp(-i theta/2 * sum_k w_k (s_k^+ A + s_k^- A^dag))`` with ``A = 1`` for the
carrier, ``a^dag`` for the blue sideband and ``a`` for the red sideband, so a
single ion on ``|g, n>`` undergoes a full blue-sideband flip at
``theta sqrt(n+1) = pi``.  For several targets the weights are
``w_k = eta_k / mean(eta)``.  The generator is real symmetric and splits into
small excitation-manifold blocks; each block is diagonalized exactly and the
eigendecomposition is cached per pulse structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .. import kernels
from ..errors import InputError, TruncationError

LEAKAGE_LIMIT = 1e-6
DEFAULT_NMAX = 10
PULSE_KINDS = ("carrier", "red_sideband", "blue_sideband", "displacement")


@dataclass(frozen=True)
class DecayChannel:
    upper: str
    lower: str
    lifetime: float  # s

    def __post_init__(self):
        if not self.lifetime > 0:
            raise InputError("decay lifetime must be positive")


@dataclass(frozen=True)
class InternalLevelSet:
    ion: str
    levels: tuple[str, ...]
    decays: tuple[DecayChannel, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "decays", tuple(self.decays))
        if len(self.levels) < 2:
            raise InputError(f"ion {self.ion!r} needs at least two levels")
        if len(set(self.levels)) != len(self.levels):
            raise InputError(f"ion {self.ion!r} has duplicate level labels")
        for ch in self.decays:
            if ch.upper not in self.levels or ch.lower not in self.levels:
                raise InputError(f"decay channel {ch} refers to unknown levels")

    @property
    def dim(self) -> int:
        return len(self.levels)

    def index(self, level: str) -> int:
        try:
            return self.levels.index(level)
        except ValueError:
            raise InputError(f"ion {self.ion!r} has no level {level!r}") from None

    def channel(self, upper: str, lower: str | None = None) -> DecayChannel:
        for ch in self.decays:
            if ch.upper == upper and (lower is None or ch.lower == lower):
                return ch
        raise InputError(f"ion {self.ion!r} has no decay channel from {upper!r}")

    def to_dict(self) -> dict:
        return {
            "ion": self.ion,
            "levels": list(self.levels),
            "decays": [{"upper": c.upper, "lower": c.lower, "lifetime_s": c.lifetime} for c in self.decays],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InternalLevelSet":
        return cls(
            d["ion"],
            tuple(d["levels"]),
            tuple(DecayChannel(c["upper"], c["lower"], float(c["lifetime_s"])) for c in d.get("decays", ())),
        )


class JointState:
    """Pure state over internal levels of several ions and one Fock mode."""

    __slots__ = ("ions", "amplitudes")

    def __init__(self, ions: Sequence[InternalLevelSet], amplitudes):
        self.ions = tuple(ions)
        amp = np.array(amplitudes, dtype=complex)
        shape = tuple(ion.dim for ion in self.ions)
        if amp.ndim != len(shape) + 1 or amp.shape[:-1] != shape:
            raise InputError(f"amplitude shape {amp.shape} does not match levels {shape} + Fock axis")
        if amp.shape[-1] < 2:
            raise InputError("need at least two Fock states")
        self.amplitudes = amp

    # construction ---------------------------------------------------------

    @classmethod
    def basis(cls, ions: Sequence[InternalLevelSet], levels: Sequence[str], n: int = 0, n_max: int = DEFAULT_NMAX):
        ions = tuple(ions)
        if len(levels) != len(ions):
            raise InputError("need one level label per ion")
        if not 0 <= n <= n_max:
            raise InputError("Fock index out of range")
        amp = np.zeros(tuple(i.dim for i in ions) + (n_max + 1,), complex)
        amp[tuple(i.index(lv) for i, lv in zip(ions, levels)) + (n,)] = 1.0
        return cls(ions, amp)

    def copy(self) -> "JointState":
        return JointState(self.ions, self.amplitudes.copy())

    def with_amplitudes(self, amp) -> "JointState":
        """Same ions, new amplitudes of identical shape (not re-validated)."""
        out = object.__new__(JointState)
        out.ions = self.ions
        out.amplitudes = np.asarray(amp, dtype=complex)
        return out

    # queries ------------------------------------------------------------

    @property
    def n_max(self) -> int:
        return self.amplitudes.shape[-1] - 1

    @property
    def vector(self) -> np.ndarray:
        return self.amplitudes.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def ion_index(self, ion) -> int:
        if isinstance(ion, (int, np.integer)):
            if not 0 <= ion < len(self.ions):
                raise InputError(f"ion index {ion} out of range")
            return int(ion)
        for i, ls in enumerate(self.ions):
            if ls.ion == ion:
                return i
        raise InputError(f"unknown ion {ion!r}")

    def level_populations(self, ion) -> dict[str, float]:
        i = self.ion_index(ion)
        p = np.abs(self.amplitudes) ** 2
        axes = tuple(a for a in range(p.ndim) if a != i)
        marg = p.sum(axis=axes)
        return {lv: float(marg[k]) for k, lv in enumerate(self.ions[i].levels)}

    def population(self, ion, level: str) -> float:
        return self.level_populations(ion)[level]

    def fock_distribution(self) -> np.ndarray:
        p = np.abs(self.amplitudes) ** 2
        return p.reshape(-1, p.shape[-1]).sum(axis=0)

    def mean_n(self) -> float:
        p = self.fock_distribution()
        return float(p @ np.arange(len(p)))

    def fidelity(self, other: "JointState") -> float:
        """|<other|self>|^2."""
        return float(abs(np.vdot(other.amplitudes, self.amplitudes)) ** 2)

    def normalized(self) -> "JointState":
        nrm = self.norm()
        if nrm == 0:
            raise InputError("cannot normalize the zero vector")
        return self.with_amplitudes(self.amplitudes / nrm)

    def __repr__(self) -> str:
        dims = "x".join(str(i.dim) for i in self.ions)
        return f"JointState({[i.ion for i in self.ions]}, dims={dims}, n_max={self.n_max})"


# ---------------------------------------------------------------------------
# pulses


@dataclass(frozen=True)
class Pulse:
    """A carrier, sideband or displacement pulse.

    ``targets`` are ion labels or indices, ``transitions`` one ``(lower,
    upper)`` pair per target and ``eta`` one Lamb-Dicke parameter per
    target.  ``alpha`` is used only by displacements.  With
    ``debye_waller`` set, carrier couplings on ``|n>`` are scaled by
    ``1 - eta^2 (2n+1)/2``.
    """

    kind: str
    targets: tuple = ()
    angle: float = 0.0
    eta: tuple[float, ...] = ()
    transitions: tuple[tuple[str, str], ...] = ()
    alpha: complex = 0.0
    debye_waller: bool = False

    def __post_init__(self):
        if self.kind not in PULSE_KINDS:
            raise InputError(f"unknown pulse kind {self.kind!r}")
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "eta", tuple(float(e) for e in self.eta))
        object.__setattr__(self, "transitions", tuple(tuple(t) for t in self.transitions))
        object.__setattr__(self, "alpha", complex(self.alpha))
        if self.kind == "displacement":
            if not (math.isfinite(self.alpha.real) and math.isfinite(self.alpha.imag)):
                raise InputError("displacement amplitude must be finite")
            return
        if not math.isfinite(self.angle):
            raise InputError("pulse angle must be finite")
        if not self.targets:
            raise InputError("pulse needs at least one target")
        if len(self.transitions) != len(self.targets):
            raise InputError("need one (lower, upper) transition per target")
        eta = self.eta or (1.0,) * len(self.targets)
        object.__setattr__(self, "eta", eta)
        if len(eta) != len(self.targets):
            raise InputError("need one eta per target")
        if self.kind != "carrier" and any(not e > 0 for e in eta):
            raise InputError("sideband pulses need eta > 0 on every target")

    def with_angle(self, angle: float) -> "Pulse":
        return Pulse(self.kind, self.targets, angle, self.eta, self.transitions, self.alpha, self.debye_waller)

    def inverse(self) -> "Pulse":
        if self.kind == "displacement":
            return Pulse("displacement", alpha=-self.alpha)
        return self.with_angle(-self.angle)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "displacement":
            d["alpha"] = [self.alpha.real, self.alpha.imag]
            return d
        d.update(
            targets=list(self.targets),
            angle=self.angle,
            eta=list(self.eta),
            transitions=[list(t) for t in self.transitions],
            debye_waller=self.debye_waller,
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Pulse":
        try:
            if d["kind"] == "displacement":
                a = d.get("alpha", [0.0, 0.0])
                return cls("displacement", alpha=complex(a[0], a[1]))
            return cls(
                d["kind"],
                tuple(d["targets"]),
                float(d["angle"]),
                tuple(d.get("eta", ())),
                tuple(tuple(t) for t in d["transitions"]),
                debye_waller=bool(d.get("debye_waller", False)),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise InputError(f"invalid pulse: {exc}") from None


def _structure_key(state: JointState, pulse: Pulse):
    dims = tuple(i.dim for i in state.ions)
    tgt = []
    for t, (lo, up) in zip(pulse.targets, pulse.transitions):
        i = state.ion_index(t)
        tgt.append((i, state.ions[i].index(lo), state.ions[i].index(up)))
    return (pulse.kind, dims, state.n_max + 1, tuple(tgt), pulse.eta, pulse.debye_waller)


def generator(key) -> np.ndarray:
    """Dense real symmetric generator G with U = exp(-i theta/2 G)."""
    kind, dims, nf, targets, eta, dw = key
    full = dims + (nf,)
    size = int(np.prod(full))
    g = np.zeros((size, size))
    mean_eta = float(np.mean(eta))
    idx = np.arange(size).reshape(full)
    n = np.arange(nf)
    for (ion, lo, up), e in zip(targets, eta):
        if kind == "carrier":
            w = np.ones(nf)
            if dw:
                w = 1.0 - 0.5 * e * e * (2 * n + 1)
            src = np.take(idx, lo, axis=ion)
            dst = np.take(idx, up, axis=ion)
            g[dst.ravel(), src.ravel()] += np.broadcast_to(w, src.shape).ravel()
            continue
        w = e / mean_eta
        lower = np.take(idx, lo, axis=ion)
        upper = np.take(idx, up, axis=ion)
        if kind == "blue_sideband":
            # (lower, n) -> (upper, n+1)
            src = lower[..., :-1]
            dst = upper[..., 1:]
            amp = np.sqrt(n[1:])
        else:
            # (lower, n) -> (upper, n-1)
            src = lower[..., 1:]
            dst = upper[..., :-1]
            amp = np.sqrt(n[1:])
        g[dst.ravel(), src.ravel()] += w * np.broadcast_to(amp, src.shape).ravel()
    return g + g.T


@lru_cache(maxsize=256)
def _decomposition(key):
    """Block-wise eigendecomposition of the pulse generator, assembled into
    dense ``(lam, V)``."""
    g = generator(key)
    size = g.shape[0]
    n_comp, labels = connected_components(csr_matrix(g != 0), directed=False)
    lam = np.zeros(size)
    vecs = np.zeros((size, size))
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        if len(members) == 1:
            m = members[0]
            lam[m] = g[m, m]
            vecs[m, m] = 1.0
            continue
        w, v, _ = kernels.jacobi_eigh(g[np.ix_(members, members)], 1e-15, 100)
        lam[members] = w
        vecs[np.ix_(members, members)] = v
    lam.setflags(write=False)
    vecs.setflags(write=False)
    return lam, vecs


def _evolve(vec, lam, vecs, angle):
    phase = np.exp(-0.5j * angle * lam)
    return vecs @ (phase * (vecs.T @ vec))


@lru_cache(maxsize=512)
def _propagators(key, angle: float):
    """Dense propagators for half and full pulse angle."""
    lam, vecs = _decomposition(key)
    out = []
    for a in (0.5 * angle, angle):
        u = (vecs * np.exp(-0.5j * a * lam)) @ vecs.T
        u.setflags(write=False)
        out.append(u)
    return tuple(out)


def _top_population(amp: np.ndarray) -> float:
    return float(np.sum(np.abs(amp[..., -1]) ** 2))


@lru_cache(maxsize=128)
def displacement_operator(alpha: complex, nf: int, pad: int = 60) -> np.ndarray:
    """D(alpha) restricted to the first ``nf`` Fock states, computed by
    exponentiation in a larger space and truncated."""
    big = nf + pad + int(4 * abs(alpha) ** 2)
    a = np.diag(np.sqrt(np.arange(1, big)), 1)
    d = expm(alpha * a.T - np.conj(alpha) * a)
    out = d[:nf, :nf].copy()
    out.setflags(write=False)
    return out


def required_nmax(alpha: complex) -> float:
    a2 = abs(alpha) ** 2
    return a2 + 6.0 * math.sqrt(a2 + 1.0)


def _apply_motion(state: JointState, op: np.ndarray) -> JointState:
    amp = np.tensordot(state.amplitudes, op, axes=([-1], [1]))
    return state.with_amplitudes(amp)


def apply_pulse(state: JointState, pulse: Pulse, *, check_leakage: bool = True) -> JointState:
    """Exact evolution of ``state`` under ``pulse``.

    Raises :class:`TruncationError` when the population of the highest Fock
    state exceeds 1e-6 before, half way through or after the pulse.
    """
    if pulse.kind == "displacement":
        if check_leakage and state.n_max < required_nmax(pulse.alpha):
            raise TruncationError(
                f"displacement |alpha|={abs(pulse.alpha):.3g} needs n_max >= "
                f"{required_nmax(pulse.alpha):.1f}; increase n_max"
            )
        out = _apply_motion(state, displacement_operator(pulse.alpha, state.n_max + 1))
        if check_leakage and _top_population(out.amplitudes) > LEAKAGE_LIMIT:
            raise TruncationError("Fock truncation leakage after displacement; increase n_max")
        return out
    key = _structure_key(state, pulse)
    u_half, u_full = _propagators(key, float(pulse.angle))
    vec = state.vector
    shape = state.amplitudes.shape
    if check_leakage:
        for probe in (vec, u_half @ vec):
            if _top_population(probe.reshape(shape)) > LEAKAGE_LIMIT:
                raise TruncationError(
                    f"population in Fock state n_max={state.n_max} exceeds {LEAKAGE_LIMIT:g}; increase n_max"
                )
    out = (u_full @ vec).reshape(shape)
    if check_leakage and _top_population(out) > LEAKAGE_LIMIT:
        raise TruncationError(
            f"population in Fock state n_max={state.n_max} exceeds {LEAKAGE_LIMIT:g}; increase n_max"
        )
    return state.with_amplitudes(out)


def apply_sequence(state: JointState, pulses: Sequence[Pulse]) -> JointState:
    for p in pulses:
        state = apply_pulse(state, p)
    return state


# ---------------------------------------------------------------------------
# incoherent steps


def _project(amp: np.ndarray, axis: int, index: int) -> np.ndarray:
    out = np.zeros_like(amp)
    sl = [slice(None)] * amp.ndim
    sl[axis] = index
    out[tuple(sl)] = amp[tuple(sl)]
    return out


def _move(amp: np.ndarray, axis: int, src: int, dst: int) -> np.ndarray:
    """Move the ``src`` slice along ``axis`` into ``dst`` (which must be empty)."""
    out = np.zeros_like(amp)
    s_src = [slice(None)] * amp.ndim
    s_src[axis] = src
    s_dst = [slice(None)] * amp.ndim
    s_dst[axis] = dst
    out[tuple(s_dst)] = amp[tuple(s_src)]
    return out


def spontaneous_decay(state: JointState, ion, channel: DecayChannel, elapsed: float, rng) -> JointState:
    """One quantum-jump step of duration ``elapsed``.

    A jump happens with probability ``p * P(upper)`` where
    ``p = 1 - exp(-elapsed / lifetime)``; it moves the upper-level amplitude
    into the lower level with the motion unchanged.  Otherwise the upper
    amplitude is damped by ``sqrt(1 - p)`` and the state renormalized.
    """
    if elapsed < 0:
        raise InputError("elapsed time must be non-negative")
    if elapsed == 0:
        return state
    i = state.ion_index(ion)
    ls = state.ions[i]
    up = ls.index(channel.upper)
    lo = ls.index(channel.lower)
    p = -math.expm1(-elapsed / channel.lifetime)
    amp = state.amplitudes
    upper_part = _project(amp, i, up)
    p_up = float(np.sum(np.abs(upper_part) ** 2))
    if p_up == 0.0:
        return state
    if rng.random() < p * p_up:
        new = _move(upper_part, i, up, lo)
    else:
        new = amp - upper_part + math.sqrt(max(0.0, 1.0 - p)) * upper_part
    nrm = np.linalg.norm(new)
    return state.with_amplitudes(new / nrm)


def _sample_index(weights: np.ndarray, rng) -> int:
    """Draw an index with probability proportional to ``weights``."""
    cum = np.cumsum(weights)
    k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(k, len(weights) - 1)


def measure_level(state: JointState, ion, rng) -> tuple[str, JointState]:
    """Projective measurement of one ion's internal level."""
    i = state.ion_index(ion)
    pops = state.level_populations(i)
    levels = state.ions[i].levels
    k = _sample_index(np.array([pops[lv] for lv in levels]), rng)
    amp = _project(state.amplitudes, i, k)
    return levels[k], state.with_amplitudes(amp / np.linalg.norm(amp))


def measure_fock(state: JointState, rng) -> tuple[int, JointState]:
    n = _sample_index(state.fock_distribution(), rng)
    amp = _project(state.amplitudes, state.amplitudes.ndim - 1, n)
    return n, state.with_amplitudes(amp / np.linalg.norm(amp))


def nbar_from_ground_population(p0: float) -> float:
    """Thermal mean occupation with ground-state probability ``p0``."""
    if not 0 < p0 <= 1:
        raise InputError("ground-state probability must lie in (0, 1]")
    return (1.0 - p0) / p0


def sample_thermal(nbar: float, rng) -> int:
    if nbar < 0:
        raise InputError("mean occupation must be non-negative")
    if nbar == 0:
        return 0
    # P(n) = (1 - q) q^n, q = nbar / (nbar + 1)
    return int(rng.geometric(1.0 / (nbar + 1.0)) - 1)


def cool_to_ground(
    state: JointState,
    rng,
    *,
    nbar: float | None = None,
    ground_population: float | None = None,
    logic_ion=None,
    logic_level: str | None = None,
) -> JointState:
    """Replace the motion by a sampled thermal Fock state.

    The old motional state is traced out by a Fock-basis measurement.  When
    ``logic_ion`` is given it is reset to ``logic_level`` (default: its first
    level), as after optical pumping; the other ions are untouched.
    """
    if nbar is None:
        nbar = 0.0 if ground_population is None else nbar_from_ground_population(ground_population)
    elif ground_population is not None:
        raise InputError("give either nbar or ground_population")
    _, s = measure_fock(state, rng)
    amp = s.amplitudes
    if logic_ion is not None:
        i = s.ion_index(logic_ion)
        _, s = measure_level(s, i, rng)
        amp = s.amplitudes
        target = s.ions[i].index(logic_level) if logic_level else 0
        current = int(np.argmax(np.sum(np.abs(amp) ** 2, axis=tuple(a for a in range(amp.ndim) if a != i))))
        if current != target:
            amp = _move(amp, i, current, target)
    internal = amp.sum(axis=-1)  # exactly one Fock index is populated
    n_new = sample_thermal(nbar, rng)
    if n_new >= s.n_max:
        raise TruncationError(f"sampled thermal state n={n_new} beyond n_max={s.n_max}; increase n_max")
    out = np.zeros_like(amp)
    out[..., n_new] = internal
    return s.with_amplitudes(out / np.linalg.norm(out))


def displace_conditional(state: JointState, ion, alphas: dict) -> JointState:
    """Apply D(alpha_level) to the motion of each branch with ``ion`` in ``level``."""
    i = state.ion_index(ion)
    nf = state.n_max + 1
    amp = state.amplitudes.copy()
    for level, alpha in alphas.items():
        if alpha == 0:
            continue
        if state.n_max < required_nmax(alpha):
            raise TruncationError(
                f"|alpha|^2 = {abs(alpha) ** 2:.3g} too large for n_max={state.n_max}; increase n_max"
            )
        k = state.ions[i].index(level)
        sl = [slice(None)] * amp.ndim
        sl[i] = k
        sub = amp[tuple(sl)]
        amp[tuple(sl)] = np.tensordot(sub, displacement_operator(complex(alpha), nf), axes=([-1], [1]))
    if _top_population(amp) > LEAKAGE_LIMIT:
        raise TruncationError("Fock truncation leakage after displacement; increase n_max")
    return state.with_amplitudes(amp)


def dipole_force_displacement(
    state: JointState,
    ion,
    potentials: dict,
    eta: float,
    detuning: float,
    duration: float,
) -> JointState:
    """State-dependent displacement from an oscillating dipole force.

    ``potentials`` maps each internal level of ``ion`` to its potential
    amplitude V_s (J).  On resonance the displacement is
    ``V_s eta t / (2 hbar)``; a drive detuned by ``detuning`` (rad/s) from
    the mode gives ``V_s eta / (2 hbar) * (exp(i d t) - 1) / (i d)``.
    """
    from ..constants import HBAR

    if duration < 0:
        raise InputError("duration must be non-negative")
    if duration == 0:
        return state
    if detuning == 0:
        shape = duration
    else:
        shape = (np.exp(1j * detuning * duration) - 1.0) / (1j * detuning)
    alphas = {lv: complex(v * eta / (2.0 * HBAR) * shape) for lv, v in potentials.items()}
    return displace_conditional(state, ion, alphas)


__all__ = [
    "DecayChannel",
    "InternalLevelSet",
    "JointState",
    "Pulse",
    "apply_pulse",
    "apply_sequence",
    "cool_to_ground",
    "dipole_force_displacement",
    "displace_conditional",
    "displacement_operator",
    "generator",
    "measure_fock",
    "measure_level",
    "nbar_from_ground_population",
    "sample_thermal",
    "spontaneous_decay",
]
