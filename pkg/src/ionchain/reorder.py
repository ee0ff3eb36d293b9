"""Ion-order control by quasi-static parameter ramps.

A ramp is followed by relaxing the chain into the nearest local minimum at
every interpolation step, starting from the previous positions.  This is
the slow-ramp limit of the real dynamics; kinetic energy picked up at
instabilities is not modelled.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass
from itertools import permutations
from typing import Sequence

import numpy as np

from .chain import (
    ChainConfiguration,
    _newton_minimize,
    axis_index,
    default_seed,
    find_equilibrium,
    potential_terms,
)
from .errors import ContinuationError, InputError, ModelAssumptionError
from .trap import BE9, MG24, ClampWarning, IonSpecies, TrapModel, check_stable, fit_trap_from_reference

SCHEMA_VERSION = 1
EPS_LIN = 1e-9  # m, radial distance below which an ion counts as on axis
ALIGN_TOL = 1e-9  # m, |dz| below which a pair counts as radially aligned
DEFAULT_STEPS = 200


# ---------------------------------------------------------------------------
# orders


def multinomial(counts: Sequence[int]) -> int:
    out = math.factorial(sum(counts))
    for c in counts:
        out //= math.factorial(c)
    return out


def enumerate_orders(species: Sequence[IonSpecies]) -> list[tuple[IonSpecies, ...]]:
    """Distinct left-to-right arrangements of a species multiset, sorted by name."""
    species = tuple(species)
    if not species:
        raise InputError("need at least one ion")
    seen = {}
    for perm in permutations(species):
        key = tuple(sp.name for sp in perm)
        seen.setdefault(key, perm)
    return [seen[k] for k in sorted(seen)]


def order_label(order: Sequence[str]) -> str:
    return ",".join(order)


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class ConfigurationClass:
    kind: str  # "linear" or "off-axis"
    order: tuple[str, ...] | None  # linear chains only
    geometry: str | None = None  # e.g. "diamond" for off-axis chains

    @property
    def label(self) -> str:
        if self.kind == "linear":
            return order_label(self.order)
        return self.geometry or "off-axis"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "order": list(self.order) if self.order else None, "geometry": self.geometry}


def classify(config: ChainConfiguration, eps_lin: float = EPS_LIN) -> ConfigurationClass:
    """Linear if every ion is within ``eps_lin`` of the z axis.

    An off-axis chain is tagged ``diamond`` when exactly two ions of the same
    species are off axis with opposite radial displacements.
    """
    pos = config.positions
    rad = np.hypot(pos[:, 0], pos[:, 1])
    if np.all(rad < eps_lin):
        return ConfigurationClass("linear", config.order)
    off = np.flatnonzero(rad >= eps_lin)
    geometry = "off-axis"
    if len(off) == 2 and config.species[off[0]].name == config.species[off[1]].name:
        r0 = pos[off[0], :2]
        r1 = pos[off[1], :2]
        if np.linalg.norm(r0 + r1) < 0.05 * max(np.linalg.norm(r0), np.linalg.norm(r1)):
            geometry = "diamond"
    return ConfigurationClass("off-axis", None, geometry)


# ---------------------------------------------------------------------------
# relaxation


@dataclass(frozen=True)
class RelaxResult:
    config: ChainConfiguration
    energies: tuple[float, ...]  # energy after each descent step and at the end


def relax(
    trap: TrapModel,
    species: Sequence[IonSpecies],
    start_positions,
    *,
    descent_steps: int = 20,
) -> ChainConfiguration:
    return relax_with_history(trap, species, start_positions, descent_steps=descent_steps).config


def relax_with_history(
    trap: TrapModel,
    species: Sequence[IonSpecies],
    start_positions,
    *,
    descent_steps: int = 20,
) -> RelaxResult:
    """Damped gradient descent into the basin, then a Newton polish.

    Both phases only accept steps that do not raise the energy.  An ion
    leaving the 1 mm trapping region raises :class:`ContinuationError`.
    """
    species = tuple(species)
    check_stable(trap, species)
    x = np.asarray(start_positions, dtype=float).reshape(len(species), 3)
    if not np.all(np.isfinite(x)):
        raise InputError("start positions must be finite")
    e, g, h = potential_terms(trap, species, x)
    energies = [e]
    # step length 1/k_max is stable for the stiffest direction
    k_max = float(np.max(np.abs(np.diag(h))))
    for _ in range(descent_steps):
        gnorm = float(np.linalg.norm(g))
        if gnorm < 1e-22 * len(species):
            break
        t = 1.0 / k_max
        while True:
            x_new = x - t * g
            e_new, g_new, _ = potential_terms(trap, species, x_new)
            if e_new <= e - 1e-4 * t * gnorm * gnorm or t * k_max < 1e-6:
                break
            t *= 0.5
        if e_new > e:
            break
        x, e, g = x_new, e_new, g_new
        energies.append(e)
        if np.max(np.abs(x)) > 1e-3:
            raise ContinuationError("an ion left the trapping region (|r| > 1 mm)", positions=x)
    fun = lambda y: potential_terms(trap, species, y)  # noqa: E731
    xf, ef, gn, iters = _newton_minimize(fun, x, len(species))
    energies.append(ef)
    return RelaxResult(ChainConfiguration(species, xf.reshape(-1, 3), ef, gn, True, iters), tuple(energies))


# ---------------------------------------------------------------------------
# ramps


@dataclass(frozen=True)
class RampSchedule:
    """Piecewise-linear path through trap snapshots; ``steps[i]`` steps lead
    from ``snapshots[i]`` to ``snapshots[i+1]``."""

    snapshots: tuple[TrapModel, ...]
    steps: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "snapshots", tuple(self.snapshots))
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        if len(self.snapshots) < 2:
            raise InputError("a schedule needs at least two snapshots")
        if len(self.steps) != len(self.snapshots) - 1:
            raise InputError("need one step count per segment")
        if any(s < 1 for s in self.steps):
            raise InputError("step counts must be >= 1")

    @classmethod
    def uniform(cls, snapshots: Sequence[TrapModel], steps: int = DEFAULT_STEPS) -> "RampSchedule":
        return cls(tuple(snapshots), (steps,) * (len(snapshots) - 1))

    def traps(self) -> list[TrapModel]:
        """Every interpolated trap after the first snapshot, in order."""
        out = []
        for i, n in enumerate(self.steps):
            a, b = self.snapshots[i], self.snapshots[i + 1]
            for k in range(1, n + 1):
                out.append(a.interpolate(b, k / n))
        return out

    def refined(self, factor: int = 2) -> "RampSchedule":
        return RampSchedule(self.snapshots, tuple(s * factor for s in self.steps))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "snapshots": [t.to_dict() for t in self.snapshots],
            "steps": list(self.steps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RampSchedule":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise InputError("schedule document needs schema_version 1")
        try:
            return cls(tuple(TrapModel.from_dict(t) for t in d["snapshots"]), tuple(d["steps"]))
        except (KeyError, TypeError) as exc:
            raise InputError(f"invalid schedule: {exc}") from None


@dataclass(frozen=True)
class RampResult:
    configs: tuple[ChainConfiguration, ...]  # initial config followed by one per step
    classes: tuple[ConfigurationClass, ...]

    @property
    def final(self) -> ChainConfiguration:
        return self.configs[-1]

    @property
    def final_class(self) -> ConfigurationClass:
        return self.classes[-1]

    def positions_um(self) -> np.ndarray:
        return np.array([c.positions for c in self.configs]) * 1e6

    def to_dict(self) -> dict:
        return {
            "species": [sp.name for sp in self.configs[0].species],
            "positions_um": self.positions_um().tolist(),
            "classes": [c.label for c in self.classes],
            "final_class": self.final_class.to_dict(),
        }

    def to_csv(self) -> str:
        n = self.configs[0].n_ions
        head = ["step"] + [f"{c}{j + 1}_um" for j in range(n) for c in "xyz"] + ["class"]
        lines = [",".join(head)]
        for k, (cfg, cls) in enumerate(zip(self.configs, self.classes)):
            vals = [str(k)] + [f"{v:.9f}" for v in (cfg.positions * 1e6).ravel()] + [cls.label.replace(",", "-")]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def ramp_and_relax(schedule: RampSchedule, initial: ChainConfiguration) -> RampResult:
    """Follow the local minimum through ``schedule`` from ``initial``."""
    species = initial.species
    configs = [initial]
    classes = [classify(initial)]
    x = initial.positions
    for k, trap in enumerate(schedule.traps(), start=1):
        try:
            cfg = relax(trap, species, x, descent_steps=0)
        except ContinuationError as exc:
            raise ContinuationError(
                f"relaxation failed at ramp step {k}: {exc}",
                step=k,
                positions=exc.positions,
                partial=RampResult(tuple(configs), tuple(classes)),
            ) from None
        configs.append(cfg)
        classes.append(classify(cfg))
        x = cfg.positions
    return RampResult(tuple(configs), tuple(classes))


# ---------------------------------------------------------------------------
# benchmark symmetric reordering


START_FREQS = ([12.2e6, 11.2e6, 2.7e6], [4.8e6, 3.7e6, 1.65e6])
TARGET_FREQS = ([9.7e6, 12.9e6, 4.6e6], [1.5e6, 5.4e6, 2.8e6])


def _fit_quiet(be_freqs, mg_freqs) -> TrapModel:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClampWarning)
        return fit_trap_from_reference(BE9, be_freqs, MG24, mg_freqs)


def benchmark_traps() -> tuple[TrapModel, TrapModel]:
    """Start and target traps for two Be and two Mg ions, fitted from the
    single-ion frequencies of both species."""
    return _fit_quiet(*START_FREQS), _fit_quiet(*TARGET_FREQS)


def benchmark_schedule(steps: int = DEFAULT_STEPS) -> RampSchedule:
    start, target = benchmark_traps()
    return RampSchedule((start, target, start), (steps, steps))


def run_symmetric_reorder(order: Sequence[IonSpecies], schedule: RampSchedule | None = None) -> RampResult:
    schedule = schedule or benchmark_schedule()
    initial = find_equilibrium(schedule.snapshots[0], tuple(order))
    return ramp_and_relax(schedule, initial)


# ---------------------------------------------------------------------------
# radial alignment and asymmetric reordering


def _push_field(axis, magnitude: float) -> np.ndarray:
    """Field vector that pushes positive ions towards +axis."""
    u = np.zeros(3)
    u[axis_index(axis)] = 1.0
    return -magnitude * u


def is_radially_aligned(config: ChainConfiguration, tol: float = ALIGN_TOL) -> bool:
    z = config.positions[:, 2]
    return float(np.max(z) - np.min(z)) < tol


def critical_radial_field(
    trap: TrapModel,
    species_pair: Sequence[IonSpecies],
    axis="y",
    *,
    tol: float = 1.0,
    max_field: float = 5000.0,
) -> float:
    """Smallest radial field (V/m) at which the axial pair turns into a chain
    aligned along the field, found by bisection.

    Each trial field is solved from the axial seed of the given order.
    """
    species = tuple(species_pair)
    if len(species) != 2:
        raise InputError("critical field is defined for two-ion chains")

    def aligned(e):
        cfg = find_equilibrium(trap.add_field(_push_field(axis, e)), species)
        return is_radially_aligned(cfg)

    if aligned(0.0):
        raise ModelAssumptionError("pair is already radially aligned without a field")
    if not aligned(max_field):
        raise ModelAssumptionError(f"no radial alignment below {max_field:g} V/m")
    lo, hi = 0.0, max_field
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if aligned(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class AsymmetricReorderResult:
    final_order: tuple[str, ...] | None
    subcritical: bool  # the field never aligned the pair radially
    ramp: RampResult

    def to_dict(self) -> dict:
        return {
            "final_order": list(self.final_order) if self.final_order else None,
            "subcritical": self.subcritical,
            "trajectory": self.ramp.to_dict(),
        }


def asymmetric_schedule(
    trap: TrapModel, field: float, twist: float, axis="y", steps: int = DEFAULT_STEPS
) -> RampSchedule:
    """apply field -> add twist -> remove field -> remove twist."""
    f = _push_field(axis, field)
    t1 = trap.add_field(f)
    t2 = t1.replace(twist_coeff=trap.twist_coeff + twist)
    t3 = t2.add_field(-f)
    t4 = t3.replace(twist_coeff=trap.twist_coeff)
    return RampSchedule((trap, t1, t2, t3, t4), (steps,) * 4)


def run_asymmetric_reorder(
    trap: TrapModel,
    species_pair: Sequence[IonSpecies],
    field: float,
    twist: float,
    axis="y",
    *,
    steps: int = DEFAULT_STEPS,
) -> AsymmetricReorderResult:
    """Field-plus-twist reordering of a two-ion chain.

    ``field`` (V/m) pushes the ions towards +``axis``; ``twist`` is the
    coefficient of the q*c*y*z term.  ``subcritical`` is set when the field
    step never aligned the pair along the field.
    """
    species = tuple(species_pair)
    schedule = asymmetric_schedule(trap, field, twist, axis, steps)
    initial = find_equilibrium(trap, species)
    ramp = ramp_and_relax(schedule, initial)
    after_field = ramp.configs[steps]
    sub = not is_radially_aligned(after_field)
    final = ramp.final_class
    return AsymmetricReorderResult(final.order if final.kind == "linear" else None, sub, ramp)


def global_minimum_class(
    trap: TrapModel, species: Sequence[IonSpecies], seeds: int = 100, seed: int = 0, spread: float | None = None
) -> tuple[ConfigurationClass, float, list[float]]:
    """Multistart search: relax from random positions and return the class
    and energy of the lowest minimum found, plus all minimum energies."""
    species = tuple(species)
    rng = np.random.default_rng(seed)
    base = default_seed(trap, species)
    spread = spread or max(float(np.ptp(base[:, 2])), 1e-6)
    best = None
    energies = []
    for _ in range(seeds):
        start = rng.normal(scale=spread, size=(len(species), 3))
        cfg = relax(trap, species, start)
        energies.append(cfg.potential_energy)
        if best is None or cfg.potential_energy < best.potential_energy:
            best = cfg
    return classify(best), best.potential_energy, energies


def count_orders(species: Sequence[IonSpecies]) -> int:
    return multinomial(list(Counter(sp.name for sp in species).values()))


__all__ = [
    "AsymmetricReorderResult",
    "ConfigurationClass",
    "RampResult",
    "RampSchedule",
    "asymmetric_schedule",
    "benchmark_schedule",
    "benchmark_traps",
    "classify",
    "count_orders",
    "critical_radial_field",
    "enumerate_orders",
    "global_minimum_class",
    "is_radially_aligned",
    "multinomial",
    "ramp_and_relax",
    "relax",
    "relax_with_history",
    "run_asymmetric_reorder",
    "run_symmetric_reorder",
]
