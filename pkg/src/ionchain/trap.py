"""Mass-dependent trap potential and single-ion secular motion.

Each axis is described by two coefficients: a ponderomotive one ``a`` and a
static one ``b``, so that a singly charged ion of mass ``m`` has

    omega^2(m) = a / m^2 + b / m

For charge ``Z`` the ponderomotive part scales as ``Z^2`` and the static part
as ``Z``.  All quantities are SI internally; helpers accept MHz and amu.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constants import AMU, ELEMENTARY_CHARGE, TWO_PI
from .errors import (
    DegenerateSystemError,
    InconsistentReferenceError,
    InputError,
    InstabilityError,
)

AXES = ("x", "y", "z")
SCHEMA_VERSION = 1

# Negative fitted rf coefficients smaller than this fraction of m^2 omega^2
# are rounding noise from two-decimal reference frequencies.
NEGATIVE_RF_CLAMP = 1e-2


class ClampWarning(UserWarning):
    pass


@dataclass(frozen=True)
class IonSpecies:
    name: str
    mass_amu: float
    charge: int = 1

    def __post_init__(self):
        if not self.mass_amu > 0:
            raise InputError(f"species {self.name!r}: mass must be positive")
        if int(self.charge) != self.charge or self.charge < 1:
            raise InputError(f"species {self.name!r}: charge must be an integer >= 1")

    @property
    def mass(self) -> float:
        """Mass in kg."""
        return self.mass_amu * AMU

    @property
    def q(self) -> float:
        return self.charge * ELEMENTARY_CHARGE

    def to_dict(self) -> dict:
        return {"name": self.name, "mass_amu": self.mass_amu, "charge": self.charge}

    @classmethod
    def from_dict(cls, d: dict) -> "IonSpecies":
        return cls(d["name"], float(d["mass_amu"]), int(d.get("charge", 1)))


# Commonly used species.
BE9 = IonSpecies("Be", 9.0)
MG24 = IonSpecies("Mg", 24.0)
MG25 = IonSpecies("Mg25", 25.0)
AL27 = IonSpecies("Al", 27.0)
CA40 = IonSpecies("Ca", 40.0)


def _vec3(v) -> tuple[float, float, float]:
    arr = np.asarray(v, dtype=float).reshape(3)
    return (float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class TrapModel:
    """Harmonic trap plus optional perturbations.

    Attributes
    ----------
    rf_coeff, static_coeff
        Per-axis ``a`` in (rad/s)^2 kg^2 and ``b`` in (rad/s)^2 kg, for unit charge.
    rf_drive
        Drive frequency in rad/s.
    uniform_field
        Static field term in V/m.  It enters the static potential as ``+E.r``,
        so an ion of charge q feels the force ``-q E``.
    axial_gradient
        Pseudopotential energy gradient along z in J/m, defined for an ion of
        ``reference_mass_amu``.  A lighter or heavier ion sees it scaled by
        ``m_ref / m``.
    cubic_scale
        Length scale of the axial cubic term ``k_ref z^3 / (2 cubic_scale)``
        where ``k_ref`` is the axial spring constant of the reference ion.
        ``None`` disables the term.
    twist_coeff
        Static cross term ``q * twist_coeff * y * z`` in V/m^2.
    """

    rf_coeff: tuple[float, float, float]
    static_coeff: tuple[float, float, float]
    rf_drive: float = TWO_PI * 100e6
    uniform_field: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axial_gradient: float = 0.0
    reference_mass_amu: float = 9.0
    cubic_scale: float | None = None
    twist_coeff: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rf_coeff", _vec3(self.rf_coeff))
        object.__setattr__(self, "static_coeff", _vec3(self.static_coeff))
        object.__setattr__(self, "uniform_field", _vec3(self.uniform_field))
        if any(a < 0 for a in self.rf_coeff):
            raise InputError("rf coefficients must be non-negative")
        if not self.rf_drive > 0:
            raise InputError("rf drive frequency must be positive")
        if self.cubic_scale is not None and self.cubic_scale == 0:
            raise InputError("cubic_scale must be non-zero when present")
        if not self.reference_mass_amu > 0:
            raise InputError("reference mass must be positive")

    # -- derived quantities -------------------------------------------------

    def omega_squared(self, species: IonSpecies) -> np.ndarray:
        """Total omega^2 per axis, (rad/s)^2, without any stability check."""
        m = species.mass
        z = species.charge
        a = np.asarray(self.rf_coeff)
        b = np.asarray(self.static_coeff)
        return z * z * a / (m * m) + z * b / m

    def spring_constants(self, species: IonSpecies) -> np.ndarray:
        """m * omega^2 per axis, N/m."""
        return species.mass * self.omega_squared(species)

    @property
    def reference_mass(self) -> float:
        return self.reference_mass_amu * AMU

    @property
    def cubic_stiffness(self) -> float:
        """Axial spring constant of a unit-charge reference ion (N/m)."""
        m = self.reference_mass
        return self.rf_coeff[2] / m + self.static_coeff[2]

    def replace(self, **changes) -> "TrapModel":
        return dataclasses.replace(self, **changes)

    def with_field(self, field_v_per_m) -> "TrapModel":
        return self.replace(uniform_field=_vec3(field_v_per_m))

    def add_field(self, field_v_per_m) -> "TrapModel":
        return self.with_field(np.asarray(self.uniform_field) + np.asarray(field_v_per_m, float))

    def scaled(self, rf_factor: float = 1.0, static_factor: float = 1.0) -> "TrapModel":
        return self.replace(
            rf_coeff=tuple(rf_factor * a for a in self.rf_coeff),
            static_coeff=tuple(static_factor * b for b in self.static_coeff),
        )

    def interpolate(self, other: "TrapModel", t: float) -> "TrapModel":
        """Linear interpolation of every coefficient; the cubic term is
        interpolated through its curvature ``1/cubic_scale``."""
        if other.reference_mass_amu != self.reference_mass_amu:
            raise InputError("cannot interpolate traps with different reference masses")

        def lerp(u, v):
            return (1.0 - t) * np.asarray(u, float) + t * np.asarray(v, float)

        inv0 = 0.0 if self.cubic_scale is None else 1.0 / self.cubic_scale
        inv1 = 0.0 if other.cubic_scale is None else 1.0 / other.cubic_scale
        inv = float(lerp(inv0, inv1))
        return TrapModel(
            rf_coeff=tuple(np.maximum(lerp(self.rf_coeff, other.rf_coeff), 0.0)),
            static_coeff=tuple(lerp(self.static_coeff, other.static_coeff)),
            rf_drive=float(lerp(self.rf_drive, other.rf_drive)),
            uniform_field=tuple(lerp(self.uniform_field, other.uniform_field)),
            axial_gradient=float(lerp(self.axial_gradient, other.axial_gradient)),
            reference_mass_amu=self.reference_mass_amu,
            cubic_scale=None if inv == 0.0 else 1.0 / inv,
            twist_coeff=float(lerp(self.twist_coeff, other.twist_coeff)),
        )

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION}
        for i, ax in enumerate(AXES):
            d[f"rf_coeff_{ax}_SI"] = self.rf_coeff[i]
        for i, ax in enumerate(AXES):
            d[f"static_coeff_{ax}_SI"] = self.static_coeff[i]
        d["rf_drive_rad_per_s"] = self.rf_drive
        d["uniform_field_V_per_m"] = list(self.uniform_field)
        d["axial_gradient_J_per_m"] = self.axial_gradient
        d["reference_mass_amu"] = self.reference_mass_amu
        d["cubic_scale_m"] = self.cubic_scale
        d["twist_coeff_V_per_m2"] = self.twist_coeff
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrapModel":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise InputError(f"unsupported trap schema_version {d.get('schema_version')!r}")
        try:
            return cls(
                rf_coeff=[d[f"rf_coeff_{ax}_SI"] for ax in AXES],
                static_coeff=[d[f"static_coeff_{ax}_SI"] for ax in AXES],
                rf_drive=d["rf_drive_rad_per_s"],
                uniform_field=d.get("uniform_field_V_per_m", [0.0, 0.0, 0.0]),
                axial_gradient=d.get("axial_gradient_J_per_m", 0.0),
                reference_mass_amu=d.get("reference_mass_amu", 9.0),
                cubic_scale=d.get("cubic_scale_m"),
                twist_coeff=d.get("twist_coeff_V_per_m2", 0.0),
            )
        except KeyError as exc:
            raise InputError(f"trap document missing key {exc}") from None


def fit_trap_from_reference(
    species_a: IonSpecies,
    freqs_a: Sequence[float],
    species_b: IonSpecies,
    freqs_b: Sequence[float],
    *,
    rf_drive: float = TWO_PI * 100e6,
    reference_mass_amu: float | None = None,
    **perturbations,
) -> TrapModel:
    """Solve for (a, b) on each axis from two species' secular frequencies (Hz).

    ``reference_mass_amu`` defaults to the lighter of the two species.
    Extra keyword arguments (``uniform_field``, ``axial_gradient`` ...) are
    passed to :class:`TrapModel`.
    """
    fa = np.asarray(freqs_a, dtype=float).reshape(3)
    fb = np.asarray(freqs_b, dtype=float).reshape(3)
    if np.any(fa <= 0) or np.any(fb <= 0):
        raise InputError("reference frequencies must be positive")
    ma, mb = species_a.mass, species_b.mass
    za, zb = species_a.charge, species_b.charge
    # m * w^2 = Z^2 a / m + Z b
    mat = np.array([[za * za / ma, za], [zb * zb / mb, zb]])
    det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
    if abs(det) <= 1e-12 * np.max(np.abs(mat[:, 0])) * np.max(np.abs(mat[:, 1])):
        raise DegenerateSystemError(
            f"species {species_a.name!r} and {species_b.name!r} give a singular fit "
            "(identical charge-to-mass behaviour)"
        )
    wa2 = (TWO_PI * fa) ** 2
    wb2 = (TWO_PI * fb) ** 2
    rf = []
    static = []
    for i, ax in enumerate(AXES):
        rhs = np.array([ma * wa2[i], mb * wb2[i]])
        a, b = np.linalg.solve(mat, rhs)
        if a < 0:
            scale = max(abs(a) / (ma * ma * wa2[i]), abs(a) / (mb * mb * wb2[i]))
            if scale >= NEGATIVE_RF_CLAMP:
                raise InconsistentReferenceError(
                    f"axis {ax}: fitted rf coefficient is negative ({scale:.3g} of m^2 w^2)"
                )
            warnings.warn(
                f"axis {ax}: negative rf coefficient ({scale:.2e} relative) clamped to 0",
                ClampWarning,
                stacklevel=2,
            )
            a = 0.0
            # relative least squares for b alone: w^2 ~ Z b / m
            g = np.array([za / ma / wa2[i], zb / mb / wb2[i]])
            b = float(np.sum(g) / np.sum(g * g))
        rf.append(float(a))
        static.append(float(b))
    if reference_mass_amu is None:
        reference_mass_amu = min(species_a.mass_amu, species_b.mass_amu)
    return TrapModel(
        rf_coeff=rf,
        static_coeff=static,
        rf_drive=rf_drive,
        reference_mass_amu=reference_mass_amu,
        **perturbations,
    )


def secular_frequencies(trap: TrapModel, species: IonSpecies) -> np.ndarray:
    """Single-ion secular frequencies (Hz) along x, y, z."""
    w2 = trap.omega_squared(species)
    for i, ax in enumerate(AXES):
        if not w2[i] > 0:
            raise InstabilityError(
                f"{species.name}: non-positive total curvature on axis {ax} "
                f"(omega^2 = {w2[i]:.4g})",
                axis=ax,
            )
    return np.sqrt(w2) / TWO_PI


@dataclass(frozen=True)
class AxisStability:
    axis: str
    frequency_hz: float  # nan when omega^2 <= 0
    bound_hz: float
    margin_hz: float
    passed: bool


@dataclass(frozen=True)
class StabilityReport:
    species: str
    axes: tuple[AxisStability, ...]

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.axes)

    def failing_axes(self) -> list[str]:
        return [a.axis for a in self.axes if not a.passed]


def stability_bound_hz(trap: TrapModel) -> float:
    """Pseudopotential stability guideline omega <= Omega_RF / (2 sqrt 2), in Hz."""
    return trap.rf_drive / (2.0 * math.sqrt(2.0)) / TWO_PI


def stability_check(trap: TrapModel, species: IonSpecies) -> StabilityReport:
    bound = stability_bound_hz(trap)
    w2 = trap.omega_squared(species)
    axes = []
    for i, ax in enumerate(AXES):
        if w2[i] > 0:
            f = math.sqrt(w2[i]) / TWO_PI
            margin = bound - f
            # the boundary itself passes; allow for rounding in w -> f
            passed = margin >= -1e-12 * bound
        else:
            f = float("nan")
            margin = float("-inf")
            passed = False
        axes.append(AxisStability(ax, f, bound, margin, passed))
    return StabilityReport(species.name, tuple(axes))


def check_stable(trap: TrapModel, species_list: Sequence[IonSpecies]) -> None:
    """Raise :class:`InstabilityError` if any species has omega^2 <= 0 on an axis."""
    seen = set()
    for sp in species_list:
        if sp in seen:
            continue
        seen.add(sp)
        secular_frequencies(trap, sp)
