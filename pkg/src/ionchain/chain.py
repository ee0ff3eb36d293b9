"""Chain equilibria, normal modes and mode-derived quantities.

Ions are listed left to right along +z.  The potential energy of a chain is
the sum of the per-ion trap terms (see :class:`~ionchain.trap.TrapModel`),
optional constant external forces and the Coulomb repulsion.  Equilibria are
found with a saddle-free damped Newton method; modes come from cyclic Jacobi
diagonalization of the mass-weighted analytic Hessian.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import kernels
from .constants import COULOMB_K, EPSILON_0, HBAR, TWO_PI
from .errors import (
    ContinuationError,
    ConvergenceError,
    InputError,
    UnstableModeError,
)
from .trap import AXES, IonSpecies, TrapModel, check_stable

SCHEMA_VERSION = 1

STEP_TOL = 1e-15  # m
GRAD_TOL_PER_ION = 1e-22  # N
MAX_ITER = 100_000
ESCAPE_RADIUS = 1e-3  # m
SADDLE_KICK = 10e-9  # m

_AXIS_INDEX = {ax: i for i, ax in enumerate(AXES)}


def axis_index(axis) -> int:
    if isinstance(axis, str):
        try:
            return _AXIS_INDEX[axis.lower()]
        except KeyError:
            raise InputError(f"unknown axis {axis!r}") from None
    if axis in (0, 1, 2):
        return int(axis)
    raise InputError(f"unknown axis {axis!r}")


def _unit(axis) -> np.ndarray:
    u = np.zeros(3)
    u[axis_index(axis)] = 1.0
    return u


# ---------------------------------------------------------------------------
# potential


def potential_terms(trap: TrapModel, species: Sequence[IonSpecies], positions, external_forces=None):
    """Energy (J), gradient (N, 3) in N and Hessian (3N, 3N) in N/m."""
    pos = np.array(positions, dtype=float).reshape(-1, 3)
    n = pos.shape[0]
    if n != len(species):
        raise InputError("positions and species list differ in length")
    charges = np.array([sp.q for sp in species])
    energy, grad, hess = kernels.coulomb_terms(pos, charges, COULOMB_K)
    grad = np.array(grad)
    hess = np.array(hess)
    field_vec = np.asarray(trap.uniform_field)
    k_ref = trap.cubic_stiffness
    for j, sp in enumerate(species):
        r = pos[j]
        k = trap.spring_constants(sp)
        z = sp.charge
        grad_z_coeff = z * z * (trap.reference_mass / sp.mass) * trap.axial_gradient
        energy += 0.5 * float(np.dot(k, r * r)) + sp.q * float(field_vec @ r) + grad_z_coeff * r[2]
        g = k * r + sp.q * field_vec
        g[2] += grad_z_coeff
        b = 3 * j
        hess[b:b + 3, b:b + 3] += np.diag(k)
        if trap.cubic_scale is not None:
            c3 = z * k_ref / (2.0 * trap.cubic_scale)
            energy += c3 * r[2] ** 3
            g[2] += 3.0 * c3 * r[2] ** 2
            hess[b + 2, b + 2] += 6.0 * c3 * r[2]
        if trap.twist_coeff:
            ct = sp.q * trap.twist_coeff
            energy += ct * r[1] * r[2]
            g[1] += ct * r[2]
            g[2] += ct * r[1]
            hess[b + 1, b + 2] += ct
            hess[b + 2, b + 1] += ct
        grad[j] += g
    if external_forces is not None:
        f = np.asarray(external_forces, dtype=float).reshape(n, 3)
        energy -= float(np.sum(f * pos))
        grad -= f
    return float(energy), grad, hess


def potential_energy(trap, species, positions, external_forces=None) -> float:
    return potential_terms(trap, species, positions, external_forces)[0]


# ---------------------------------------------------------------------------
# equilibrium


@dataclass(frozen=True)
class ChainConfiguration:
    species: tuple[IonSpecies, ...]
    positions: np.ndarray  # (N, 3), m
    potential_energy: float
    gradient_norm: float
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        if not self.species:
            raise InputError("species list must be non-empty")
        pos = np.array(self.positions, dtype=float).reshape(len(self.species), 3)
        pos.setflags(write=False)
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "positions", pos)

    @property
    def n_ions(self) -> int:
        return len(self.species)

    @property
    def masses(self) -> np.ndarray:
        return np.array([sp.mass for sp in self.species])

    @property
    def order(self) -> tuple[str, ...]:
        """Species names sorted by z coordinate (left to right)."""
        idx = np.argsort(self.positions[:, 2], kind="stable")
        return tuple(self.species[i].name for i in idx)

    def to_dict(self) -> dict:
        return {
            "species": [sp.to_dict() for sp in self.species],
            "positions_um": (self.positions * 1e6).tolist(),
            "potential_energy_J": self.potential_energy,
            "gradient_norm_N": self.gradient_norm,
            "converged": self.converged,
        }


def default_seed(trap: TrapModel, species: Sequence[IonSpecies]) -> np.ndarray:
    """Ions equally spaced on z, spacing from the lightest ion's two-ion value."""
    n = len(species)
    light = min(species, key=lambda sp: sp.mass / sp.charge)
    wz2 = trap.omega_squared(light)[2]
    if not wz2 > 0:
        wz2 = float(np.max(np.abs(trap.omega_squared(light))))
    d = (light.q ** 2 / (2.0 * math.pi * EPSILON_0 * light.mass * wz2)) ** (1.0 / 3.0)
    pos = np.zeros((n, 3))
    pos[:, 2] = (np.arange(n) - 0.5 * (n - 1)) * d
    return pos


def _eigh(h):
    w, v, _ = kernels.jacobi_eigh(h, 1e-15, 100)
    return np.asarray(w), np.asarray(v)


def _newton_minimize(fun, x0, n_ions, max_iter=MAX_ITER, escape=ESCAPE_RADIUS):
    """Saddle-free damped Newton.  ``fun(x)`` returns (E, grad, hess) in SI."""
    x = np.array(x0, dtype=float).ravel()
    e, g, h = fun(x)
    g = g.ravel()
    grad_tol = GRAD_TOL_PER_ION * n_ions
    kicks = 0
    for it in range(1, max_iter + 1):
        w, v = _eigh(h)
        wmax = float(np.max(np.abs(w)))
        floor = 1e-8 * wmax if wmax > 0 else 1.0
        gv = v.T @ g
        step = -v @ (gv / np.maximum(np.abs(w), floor))
        gnorm = float(np.linalg.norm(g))
        unstable = w < -1e-9 * wmax
        if gnorm < grad_tol and np.any(unstable):
            # stationary but not a minimum: push along the softest unstable mode
            kvec = v[:, int(np.argmin(w))]
            idx = int(np.argmax(np.abs(kvec) >= np.max(np.abs(kvec)) * (1 - 1e-12)))
            step = SADDLE_KICK * kvec * np.sign(kvec[idx])
            kicks += 1
            if kicks > 100:
                raise ConvergenceError("stuck at a saddle point", step=it, positions=x.reshape(-1, 3))
            x = x + step
            e, g, h = fun(x)
            g = g.ravel()
            continue
        t = 1.0
        slope = float(g @ step)
        tol_e = 1e-14 * abs(e)
        while True:
            x_new = x + t * step
            e_new, g_new, h_new = fun(x_new)
            if e_new <= e + 1e-4 * t * slope + tol_e or t < 1e-12:
                break
            t *= 0.5
        dx = float(np.max(np.abs(t * step)))
        x, e, g, h = x_new, e_new, g_new.ravel(), h_new
        if np.max(np.abs(x)) > escape:
            raise ContinuationError(
                "an ion left the trapping region (|r| > 1 mm)", step=it, positions=x.reshape(-1, 3)
            )
        gnorm = float(np.linalg.norm(g))
        if dx < STEP_TOL and gnorm < grad_tol:
            w, _ = _eigh(h)
            wmax = float(np.max(np.abs(w)))
            if not np.any(w < -1e-9 * wmax):
                return x, e, gnorm, it
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations", step=max_iter, positions=x.reshape(-1, 3)
    )


def find_equilibrium(
    trap: TrapModel,
    species_list: Sequence[IonSpecies],
    seed_positions=None,
    *,
    external_forces=None,
    max_iter: int = MAX_ITER,
) -> ChainConfiguration:
    """Local minimum of the chain potential.

    Without ``seed_positions`` ions start equally spaced on the axis in the
    listed order.  If the first start fails to converge, seeds displaced
    along x and then y are tried before giving up.
    """
    species = tuple(species_list)
    if not species:
        raise InputError("need at least one ion")
    check_stable(trap, species)
    n = len(species)
    fun = lambda x: potential_terms(trap, species, x, external_forces)  # noqa: E731
    if seed_positions is None:
        base = default_seed(trap, species)
        seeds = [base]
        scale = max(float(np.ptp(base[:, 2])), 1e-6)
        for ax in (0, 1):
            s = base.copy()
            s[:, ax] += 1e-3 * scale * (np.arange(n) % 2 - 0.5)
            seeds.append(s)
    else:
        seeds = [np.asarray(seed_positions, dtype=float).reshape(n, 3)]
    last_error = None
    for seed in seeds:
        try:
            x, e, gnorm, iters = _newton_minimize(fun, seed, n, max_iter=max_iter)
        except ConvergenceError as exc:
            last_error = exc
            continue
        return ChainConfiguration(species, x.reshape(n, 3), e, gnorm, True, iters)
    raise last_error


# ---------------------------------------------------------------------------
# normal modes


def _fix_sign(v: np.ndarray) -> np.ndarray:
    """Largest-magnitude component positive; ties go to the lowest index."""
    v = v.copy()
    for a in range(v.shape[1]):
        col = v[:, a]
        big = np.max(np.abs(col))
        idx = int(np.argmax(np.abs(col) >= big * (1.0 - 1e-12)))
        if col[idx] < 0:
            v[:, a] = -col
    return v


@dataclass(frozen=True)
class NormalModeSet:
    config: ChainConfiguration
    eigenvalues: np.ndarray  # omega^2, (rad/s)^2, ascending
    eigenvectors: np.ndarray  # columns, mass-weighted, (3N, 3N)
    hessian: np.ndarray = field(repr=False)  # mass-weighted

    @property
    def frequencies(self) -> np.ndarray:
        """Signed angular frequencies; negative for unstable modes."""
        w2 = self.eigenvalues
        return np.sign(w2) * np.sqrt(np.abs(w2))

    @property
    def frequencies_hz(self) -> np.ndarray:
        return self.frequencies / TWO_PI

    @property
    def stable(self) -> np.ndarray:
        return self.eigenvalues > 0

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def species(self) -> tuple[IonSpecies, ...]:
        return self.config.species

    def vector(self, alpha: int) -> np.ndarray:
        """Eigenvector of mode ``alpha`` as (N, 3)."""
        return self.eigenvectors[:, alpha].reshape(-1, 3)

    def degenerate_pairs(self, rtol: float = 1e-9) -> list[tuple[int, int]]:
        f = self.eigenvalues
        out = []
        for a in range(len(f) - 1):
            if abs(f[a + 1] - f[a]) <= rtol * max(abs(f[a]), abs(f[a + 1])):
                out.append((a, a + 1))
        return out

    def labels(self) -> list[str]:
        return [mode_label(self, a) for a in range(self.n_modes)]

    def residuals(self) -> np.ndarray:
        hv = self.hessian @ self.eigenvectors
        r = hv - self.eigenvectors * self.eigenvalues
        return np.linalg.norm(r, axis=0)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "species": [sp.to_dict() for sp in self.species],
            "order": list(self.config.order),
            "positions_um": (self.config.positions * 1e6).tolist(),
            "frequencies_MHz": (self.frequencies_hz / 1e6).tolist(),
            "stable": self.stable.tolist(),
            "labels": self.labels(),
            "eigenvectors": self.eigenvectors.T.tolist(),
        }

    def to_table(self, precision: int = 3) -> str:
        """Plain-text table: one row per mode, highest frequency first,
        columns ``f (MHz)`` then x, y, z components for each ion."""
        head = ["f/MHz"]
        for j, sp in enumerate(self.species):
            head += [f"{c}{j + 1}({sp.name})" for c in AXES]
        rows = []
        for a in range(self.n_modes - 1, -1, -1):
            vals = [f"{self.frequencies_hz[a] / 1e6:.2f}"]
            vals += [f"{c:.{precision}f}" for c in self.eigenvectors[:, a]]
            rows.append(vals)
        width = max(len(s) for s in head + [v for r in rows for v in r]) + 2
        lines = ["".join(s.rjust(width) for s in head)]
        lines += ["".join(s.rjust(width) for s in r) for r in rows]
        return "\n".join(lines)


def mass_weighted_hessian(trap, config: ChainConfiguration, external_forces=None) -> np.ndarray:
    _, _, h = potential_terms(trap, config.species, config.positions, external_forces)
    mv = np.repeat(config.masses, 3)
    return h / np.sqrt(np.outer(mv, mv))


def normal_modes(trap: TrapModel, config: ChainConfiguration, external_forces=None) -> NormalModeSet:
    hm = mass_weighted_hessian(trap, config, external_forces)
    hm = 0.5 * (hm + hm.T)
    w, v = _eigh(hm)
    order = np.argsort(w, kind="stable")
    w = w[order]
    v = _fix_sign(v[:, order])
    return NormalModeSet(config, w, v, hm)


def solve_modes(trap, species_list, seed_positions=None, external_forces=None) -> NormalModeSet:
    cfg = find_equilibrium(trap, species_list, seed_positions, external_forces=external_forces)
    return normal_modes(trap, cfg, external_forces)


def mode_label(modes: NormalModeSet, alpha: int) -> str:
    """``<axis>-ip`` or ``<axis>-oop`` from the dominant axis and the sign
    pattern of that axis' components."""
    vec = modes.vector(alpha)
    weight = np.sum(vec * vec, axis=0)
    ax = int(np.argmax(weight))
    comp = vec[:, ax]
    if len(comp) == 1:
        return AXES[ax]
    corr = (np.sum(comp) ** 2 - np.sum(comp * comp)) / 2.0
    return f"{AXES[ax]}-{'ip' if corr >= 0 else 'oop'}"


def find_mode(modes: NormalModeSet, axis, phase: str = "oop") -> int:
    """Index of the mode dominated by ``axis`` with in-phase (``ip``) or
    out-of-phase (``oop``) character.

    Among modes whose weight on ``axis`` exceeds one half, ``ip`` picks the
    largest pair correlation sum_{j<l} v_j v_l and ``oop`` the smallest.
    """
    if phase not in ("ip", "oop"):
        raise InputError("phase must be 'ip' or 'oop'")
    ai = axis_index(axis)
    best = None
    best_corr = None
    for a in range(modes.n_modes):
        vec = modes.vector(a)
        comp = vec[:, ai]
        if np.sum(comp * comp) < 0.5:
            continue
        corr = (np.sum(comp) ** 2 - np.sum(comp * comp)) / 2.0
        key = corr if phase == "ip" else -corr
        if best is None or key > best_corr:
            best, best_corr = a, key
    if best is None:
        raise InputError(f"no mode dominated by axis {AXES[ai]}")
    return best


# ---------------------------------------------------------------------------
# mode-derived quantities


def _stable_mode(modes: NormalModeSet, alpha: int) -> float:
    w2 = modes.eigenvalues[alpha]
    if not w2 > 0:
        raise UnstableModeError(f"mode {alpha} is unstable (omega^2 = {w2:.4g})")
    return math.sqrt(w2)


def ground_state_extent(modes: NormalModeSet, ion: int, alpha: int):
    """RMS ground-state extent of ion ``ion`` in mode ``alpha``.

    Returns ``(components, norm)`` in metres.
    """
    w = _stable_mode(modes, alpha)
    m = modes.species[ion].mass
    comp = math.sqrt(HBAR / (2.0 * m * w)) * np.abs(modes.vector(alpha)[ion])
    return comp, float(np.linalg.norm(comp))


def lamb_dicke(modes: NormalModeSet, wavevector, ion: int, alpha: int) -> float:
    w = _stable_mode(modes, alpha)
    m = modes.species[ion].mass
    k = np.asarray(wavevector, dtype=float).reshape(3)
    return math.sqrt(HBAR / (2.0 * m * w)) * float(k @ modes.vector(alpha)[ion])


def extract_mode_frequency(red_detuning: float, blue_detuning: float) -> float:
    """Mode frequency from the red and blue sideband resonance detunings."""
    if not blue_detuning > red_detuning:
        raise InputError("blue sideband resonance must lie above the red one")
    return 0.5 * (blue_detuning - red_detuning)


# ---------------------------------------------------------------------------
# field scans and compensation


def _greedy_match(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """perm[i] = column of ``cur`` matched to column i of ``prev``."""
    ov = np.abs(prev.T @ cur)
    n = ov.shape[0]
    perm = np.full(n, -1)
    free_r = np.ones(n, bool)
    free_c = np.ones(n, bool)
    for _ in range(n):
        masked = np.where(free_r[:, None] & free_c[None, :], ov, -1.0)
        i, j = np.unravel_index(int(np.argmax(masked)), masked.shape)
        perm[i] = j
        free_r[i] = False
        free_c[j] = False
    return perm


@dataclass(frozen=True)
class ModeScanResult:
    parameter: str
    axis: str
    values: np.ndarray  # V/m
    frequencies: np.ndarray  # (P, 3N) Hz, columns follow tracked identities
    eigenvectors: np.ndarray  # (P, 3N, 3N), column alpha tracked
    labels: tuple[str, ...]  # identities assigned at the first point
    positions: np.ndarray  # (P, N, 3) m

    def column(self, alpha: int) -> np.ndarray:
        return self.frequencies[:, alpha]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "parameter": self.parameter,
            "axis": self.axis,
            "values_V_per_m": self.values.tolist(),
            "labels": list(self.labels),
            "frequencies_MHz": (self.frequencies / 1e6).tolist(),
            "eigenvectors": [ev.T.tolist() for ev in self.eigenvectors],
            "positions_um": (self.positions * 1e6).tolist(),
        }

    def to_csv(self, shift: bool = False) -> str:
        """CSV with one column per tracked mode (MHz); ``shift`` adds columns of
        the shift in Hz relative to the point closest to zero field."""
        head = ["field_V_per_m"] + [f"f{a + 1}_{lab}_MHz" for a, lab in enumerate(self.labels)]
        ref = self.frequencies[int(np.argmin(np.abs(self.values)))]
        if shift:
            head += [f"shift{a + 1}_Hz" for a in range(len(self.labels))]
        lines = [",".join(head)]
        for p, val in enumerate(self.values):
            row = [repr(float(val))] + [f"{f / 1e6:.9f}" for f in self.frequencies[p]]
            if shift:
                row += [f"{d:.6f}" for d in self.frequencies[p] - ref]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _modes_at(trap, species, axis_vec, value):
    return solve_modes(trap.add_field(value * axis_vec), species)


def scan_field(
    trap: TrapModel,
    species_list: Sequence[IonSpecies],
    axis,
    values,
    *,
    workers: int | None = None,
) -> ModeScanResult:
    """Modes at each applied field value (added to the trap's own field).

    Points are solved independently, optionally on a thread pool; mode
    identities are then tracked by greedy eigenvector overlap.
    """
    vals = np.asarray(values, dtype=float).ravel()
    if len(vals) < 1:
        raise InputError("empty field grid")
    d = np.diff(vals)
    if len(vals) > 1 and not (np.all(d > 0) or np.all(d < 0)):
        raise InputError("field grid must be strictly monotone")
    species = tuple(species_list)
    u = _unit(axis)
    results: list = [None] * len(vals)
    failure = None
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_modes_at, trap, species, u, v) for v in vals]
            for i, fut in enumerate(futures):
                try:
                    results[i] = fut.result()
                except ContinuationError as exc:
                    failure = failure or (i, exc)
    else:
        for i, v in enumerate(vals):
            try:
                results[i] = _modes_at(trap, species, u, v)
            except ContinuationError as exc:
                failure = (i, exc)
                break
    ok = results if failure is None else results[: failure[0]]
    scan = _track(vals[: len(ok)], ok, AXES[axis_index(axis)]) if ok else None
    if failure is not None:
        i, exc = failure
        raise ContinuationError(
            f"equilibration failed at {vals[i]:g} V/m: {exc}", step=i, positions=exc.positions, partial=scan
        )
    return scan


def _track(vals, mode_sets, axis_name) -> ModeScanResult:
    first = mode_sets[0]
    freqs = []
    vecs = []
    prev = first.eigenvectors
    for ms in mode_sets:
        perm = _greedy_match(prev, ms.eigenvectors)
        f = ms.frequencies_hz[perm]
        v = ms.eigenvectors[:, perm]
        freqs.append(f)
        vecs.append(v)
        prev = v
    return ModeScanResult(
        parameter="uniform_field",
        axis=axis_name,
        values=np.asarray(vals),
        frequencies=np.array(freqs),
        eigenvectors=np.array(vecs),
        labels=tuple(first.labels()),
        positions=np.array([ms.config.positions for ms in mode_sets]),
    )


@dataclass(frozen=True)
class CompensationResult:
    field: float  # V/m, applied field at the extremum
    frequency_hz: float
    kind: str  # "min" or "max"
    mode_label: str
    scan: ModeScanResult


def compensate_stray_field(
    trap: TrapModel,
    species_list: Sequence[IonSpecies],
    axis="y",
    *,
    phase: str = "oop",
    span: float = 300.0,
    points: int = 61,
    xtol: float = 1e-4,
) -> CompensationResult:
    """Applied field that puts the tracked radial mode at its frequency extremum.

    A coarse symmetric scan locates the extremum of the mode selected by
    ``axis`` and ``phase`` at zero applied field; a bounded scalar search
    then refines it.  With a stray field E_s in ``trap`` the returned field
    is close to -E_s.
    """
    species = tuple(species_list)
    vals = np.linspace(-span, span, points)
    scan = scan_field(trap, species, axis, vals)
    i0 = int(np.argmin(np.abs(vals)))
    # identify the mode at the grid point nearest zero, then follow it back to
    # column space of the tracked scan
    ref_set = NormalModeSet(
        ChainConfiguration(species, scan.positions[i0], 0.0, 0.0),
        np.sign(scan.frequencies[i0]) * (TWO_PI * scan.frequencies[i0]) ** 2,
        scan.eigenvectors[i0],
        np.zeros((3 * len(species),) * 2),
    )
    col = find_mode(ref_set, axis, phase)
    curve = scan.frequencies[:, col]
    candidates = []
    for kind, idx in (("min", int(np.argmin(curve))), ("max", int(np.argmax(curve)))):
        if 0 < idx < len(vals) - 1:
            prominence = abs(curve[idx] - 0.5 * (curve[0] + curve[-1]))
            candidates.append((prominence, kind, idx))
    if not candidates:
        raise InputError("tracked mode has no interior extremum in the scan range")
    _, kind, idx = max(candidates)
    ref_vec = scan.eigenvectors[idx][:, col]
    sign = 1.0 if kind == "min" else -1.0
    u = _unit(axis)

    def objective(e):
        ms = _modes_at(trap, species, u, e)
        a = int(np.argmax(np.abs(ms.eigenvectors.T @ ref_vec)))
        return sign * ms.frequencies_hz[a]

    res = minimize_scalar(
        objective, bounds=(vals[idx - 1], vals[idx + 1]), method="bounded", options={"xatol": xtol}
    )
    return CompensationResult(float(res.x), float(sign * res.fun), kind, scan.labels[col], scan)


def field_for_shift(
    trap: TrapModel,
    species_list: Sequence[IonSpecies],
    axis="y",
    shift_hz: float = 200.0,
    *,
    phase: str = "oop",
    max_field: float = 1000.0,
) -> float:
    """Smallest positive applied field producing a frequency change of
    ``shift_hz`` in the selected radial mode, relative to zero applied field."""
    species = tuple(species_list)
    base = solve_modes(trap, species)
    col = find_mode(base, axis, phase)
    f0 = base.frequencies_hz[col]
    ref = base.eigenvectors[:, col]
    u = _unit(axis)

    def delta(e):
        ms = _modes_at(trap, species, u, e)
        a = int(np.argmax(np.abs(ms.eigenvectors.T @ ref)))
        return abs(ms.frequencies_hz[a] - f0) - shift_hz

    lo, hi = 0.0, 1.0
    while delta(hi) < 0:
        lo, hi = hi, 2 * hi
        if hi > max_field:
            raise InputError(f"shift of {shift_hz} Hz not reached below {max_field} V/m")
    return float(brentq(delta, lo, hi, xtol=1e-6))


# ---------------------------------------------------------------------------
# order-dependent shifts


def _mirror_vectors(v: np.ndarray, n_ions: int) -> np.ndarray:
    """Map eigenvectors of a reversed chain onto the original ordering by
    reversing ion blocks and negating z."""
    out = v.reshape(n_ions, 3, -1)[::-1].copy()
    out[:, 2, :] *= -1
    return out.reshape(3 * n_ions, -1)


@dataclass(frozen=True)
class OrderShiftResult:
    order_ab: tuple[str, ...]
    order_ba: tuple[str, ...]
    labels: tuple[str, ...]
    frequencies_ab: np.ndarray  # Hz
    frequencies_ba: np.ndarray  # Hz, matched to the ab modes
    separation_ab: float
    separation_ba: float

    @property
    def delta_hz(self) -> np.ndarray:
        """f(A, B) - f(B, A) per mode."""
        return self.frequencies_ab - self.frequencies_ba

    def shift(self, label: str) -> float:
        return float(self.delta_hz[self.labels.index(label)])


def order_dependent_shift(
    trap: TrapModel,
    species_pair: Sequence[IonSpecies],
    *,
    ion_forces: dict | None = None,
) -> OrderShiftResult:
    """Mode frequencies of the (A, B) and (B, A) orders and their difference.

    ``ion_forces`` optionally maps species names to a constant force vector
    (N) acting on every ion of that species.
    """
    a, b = species_pair
    ab = (a, b)
    ba = (b, a)

    def forces(sps):
        if not ion_forces:
            return None
        return np.array([np.asarray(ion_forces.get(sp.name, (0.0, 0.0, 0.0)), float) for sp in sps])

    m_ab = solve_modes(trap, ab, external_forces=forces(ab))
    m_ba = solve_modes(trap, ba, external_forces=forces(ba))
    perm = _greedy_match(m_ab.eigenvectors, _mirror_vectors(m_ba.eigenvectors, 2))
    sep = lambda ms: float(np.linalg.norm(np.diff(ms.config.positions, axis=0)))  # noqa: E731
    return OrderShiftResult(
        order_ab=(a.name, b.name),
        order_ba=(b.name, a.name),
        labels=tuple(m_ab.labels()),
        frequencies_ab=m_ab.frequencies_hz,
        frequencies_ba=m_ba.frequencies_hz[perm],
        separation_ab=sep(m_ab),
        separation_ba=sep(m_ba),
    )


@dataclass(frozen=True)
class RadiationPressureResult:
    epsilon: float  # m, |F| / (m omega^2) along the force
    separation: float  # m, unperturbed
    analytic_factor: float  # 1 +- epsilon / (2 d), equal masses only (nan otherwise)
    first_order_factor: float  # 1 +- epsilon / (3 d), exact first order for equal masses
    numerical_factor: float  # ratio of re-diagonalized oop frequency to unperturbed
    mode_label: str


def radiation_pressure_displacement(
    trap: TrapModel, config: ChainConfiguration, force, ion: int = 0
) -> RadiationPressureResult:
    """Spacing change and axial out-of-phase frequency factor for a constant
    force on one ion of a two-ion chain.

    The sign in the analytic factors is ``+`` when the force pushes the ion
    towards its neighbour.
    """
    if config.n_ions != 2:
        raise InputError("radiation pressure estimate needs a two-ion chain")
    f = np.asarray(force, dtype=float).reshape(3)
    fmag = float(np.linalg.norm(f))
    sp = config.species[ion]
    other = 1 - ion
    rel = config.positions[other] - config.positions[ion]
    d = float(np.linalg.norm(rel))
    if fmag == 0.0:
        eps = 0.0
        sgn = 1.0
    else:
        u = f / fmag
        k_eff = float(np.dot(trap.spring_constants(sp), u * u))
        eps = fmag / k_eff
        sgn = 1.0 if float(f @ rel) >= 0 else -1.0
    equal = config.species[0].mass == config.species[1].mass and config.species[0].charge == config.species[1].charge
    analytic = 1.0 + sgn * eps / (2.0 * d) if equal else float("nan")
    first = 1.0 + sgn * eps / (3.0 * d) if equal else float("nan")
    base = normal_modes(trap, config)
    col = find_mode(base, "z", "oop")
    if fmag == 0.0:
        return RadiationPressureResult(eps, d, analytic, first, 1.0, base.labels()[col])
    forces = np.zeros((2, 3))
    forces[ion] = f
    cfg = find_equilibrium(trap, config.species, config.positions, external_forces=forces)
    pert = normal_modes(trap, cfg, forces)
    a = int(np.argmax(np.abs(pert.eigenvectors.T @ base.eigenvectors[:, col])))
    ratio = float(pert.frequencies[a] / base.frequencies[col])
    return RadiationPressureResult(eps, d, analytic, first, ratio, base.labels()[col])
