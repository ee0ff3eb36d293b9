"""Scattering physics and motional rate equations.

Rates are in quanta per second.  ``doppler_rate`` is negative for cooling.
The spontaneous-recoil part of the heating rate is divided by hbar*omega so
that both heating terms multiply the scattering rate as pure numbers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .chain import NormalModeSet, find_mode, lamb_dicke
from .constants import HBAR, TWO_PI
from .errors import InputError, ModelAssumptionError, UnstableModeError

SCHEMA_VERSION = 1


class ModelAssumptionWarning(UserWarning):
    pass


def wavevector(wavelength: float, direction=(0.0, 0.0, 1.0)) -> np.ndarray:
    """k = 2 pi / lambda along ``direction`` (normalized here)."""
    d = np.asarray(direction, dtype=float).reshape(3)
    n = np.linalg.norm(d)
    if n == 0 or not wavelength > 0:
        raise InputError("need a positive wavelength and a non-zero direction")
    return TWO_PI / wavelength * d / n


@dataclass(frozen=True)
class LaserField:
    """Single beam or Raman pair; for Raman drives ``wavevector`` is the
    difference wavevector."""

    wavevector: tuple[float, float, float]
    rabi_frequency: float  # rad/s
    detuning: float  # rad/s
    linewidth: float  # rad/s

    def __post_init__(self):
        k = np.asarray(self.wavevector, dtype=float).reshape(3)
        object.__setattr__(self, "wavevector", tuple(float(c) for c in k))
        if not self.linewidth > 0:
            raise InputError("linewidth must be positive")
        for name in ("rabi_frequency", "detuning"):
            if not math.isfinite(getattr(self, name)):
                raise InputError(f"{name} must be finite")

    @classmethod
    def from_saturation(cls, wavevector, saturation: float, detuning: float, linewidth: float) -> "LaserField":
        if saturation < 0:
            raise InputError("saturation must be non-negative")
        return cls(wavevector, linewidth * math.sqrt(saturation / 2.0), detuning, linewidth)

    @property
    def k(self) -> np.ndarray:
        return np.asarray(self.wavevector)

    @property
    def saturation(self) -> float:
        return 2.0 * self.rabi_frequency ** 2 / self.linewidth ** 2

    def to_dict(self) -> dict:
        return {
            "wavevector_rad_per_m": list(self.wavevector),
            "rabi_frequency_rad_per_s": self.rabi_frequency,
            "detuning_rad_per_s": self.detuning,
            "linewidth_rad_per_s": self.linewidth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LaserField":
        try:
            if "saturation" in d:
                return cls.from_saturation(
                    d["wavevector_rad_per_m"], float(d["saturation"]),
                    float(d["detuning_rad_per_s"]), float(d["linewidth_rad_per_s"]),
                )
            return cls(
                d["wavevector_rad_per_m"], float(d["rabi_frequency_rad_per_s"]),
                float(d["detuning_rad_per_s"]), float(d["linewidth_rad_per_s"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"invalid laser specification: {exc}") from None


def excited_population(laser: LaserField) -> float:
    s = laser.saturation
    x = 2.0 * laser.detuning / laser.linewidth
    return 0.5 * s / (1.0 + s + x * x)


def excited_population_slope(laser: LaserField) -> float:
    """d(rho_ee)/d(Delta), in s/rad."""
    s = laser.saturation
    g = laser.linewidth
    denom = 1.0 + s + (2.0 * laser.detuning / g) ** 2
    return -0.5 * s * (8.0 * laser.detuning / (g * g)) / (denom * denom)


def scattering_rate(laser: LaserField) -> float:
    return laser.linewidth * excited_population(laser)


def radiation_pressure_force(laser: LaserField) -> np.ndarray:
    """Time-averaged scattering force hbar k Gamma rho_ee (N)."""
    return HBAR * laser.k * scattering_rate(laser)


# ---------------------------------------------------------------------------
# mode coupling


@dataclass(frozen=True)
class ModeCoupling:
    """What the rate formulas need to know about one ion in one mode."""

    omega: float  # rad/s
    mass: float  # kg
    eta: float  # Lamb-Dicke parameter k . e' sqrt(hbar / 2 m omega)
    amplitude: float  # |e'_j| of the addressed ion

    def scaled(self, factor: float) -> "ModeCoupling":
        """Same mode with the ion's eigenvector projection scaled."""
        return ModeCoupling(self.omega, self.mass, self.eta * factor, self.amplitude * abs(factor))


def mode_coupling(modes: NormalModeSet, laser: LaserField, ion: int, alpha: int) -> ModeCoupling:
    w2 = modes.eigenvalues[alpha]
    if not w2 > 0:
        raise UnstableModeError(f"mode {alpha} is unstable")
    eta = lamb_dicke(modes, laser.k, ion, alpha)
    amp = float(np.linalg.norm(modes.vector(alpha)[ion]))
    return ModeCoupling(math.sqrt(w2), modes.species[ion].mass, eta, amp)


def _check_fast_decay(c: ModeCoupling, laser: LaserField) -> None:
    if laser.linewidth < 5.0 * c.omega:
        warnings.warn(
            f"linewidth/omega = {laser.linewidth / c.omega:.3g}; rate equations assume "
            "a linewidth much larger than the mode frequency",
            ModelAssumptionWarning,
            stacklevel=3,
        )


def doppler_rate_from_coupling(c: ModeCoupling, laser: LaserField, n: float) -> float:
    _check_fast_decay(c, laser)
    return -2.0 * c.omega * c.eta ** 2 * (n + 0.5) * laser.linewidth * excited_population_slope(laser)


def recoil_heating_from_coupling(c: ModeCoupling, laser: LaserField) -> float:
    k2 = float(laser.k @ laser.k)
    spont = 0.4 * HBAR * k2 / (2.0 * c.mass * c.omega) * c.amplitude ** 2
    return (c.eta ** 2 + spont) * scattering_rate(laser)


def doppler_equilibrium_from_coupling(c: ModeCoupling, laser: LaserField) -> float:
    if not laser.detuning < 0:
        raise ModelAssumptionError("Doppler equilibrium needs red detuning")
    # dn/dt = -A (n + 1/2) + B
    a = 2.0 * c.omega * c.eta ** 2 * laser.linewidth * excited_population_slope(laser)
    b = recoil_heating_from_coupling(c, laser)
    if not a > 0:
        raise ModelAssumptionError("no cooling of this mode by this beam (zero projection)")
    n = b / a - 0.5
    if n < 0:
        raise ModelAssumptionError("rate balance gives a negative occupation")
    return n


def doppler_rate(modes: NormalModeSet, laser: LaserField, ion: int, alpha: int, n: float) -> float:
    """dn/dt (quanta/s) for mode ``alpha`` from a beam on ion ``ion``."""
    return doppler_rate_from_coupling(mode_coupling(modes, laser, ion, alpha), laser, n)


def recoil_heating_rate(modes: NormalModeSet, laser: LaserField, ion: int, alpha: int) -> float:
    """Momentum-diffusion heating (quanta/s); valid for low saturation."""
    return recoil_heating_from_coupling(mode_coupling(modes, laser, ion, alpha), laser)


def doppler_equilibrium(modes: NormalModeSet, laser: LaserField, ion: int, alpha: int) -> float:
    return doppler_equilibrium_from_coupling(mode_coupling(modes, laser, ion, alpha), laser)


# ---------------------------------------------------------------------------
# anomalous heating


@dataclass(frozen=True)
class FieldNoiseSpec:
    """Uniform electric-field noise along ``direction``.

    ``spectral_density`` is either a callable of angular frequency (rad/s)
    or a sequence of ``(omega, S_E)`` pairs that is interpolated linearly;
    S_E is in (V/m)^2/Hz.
    """

    direction: tuple[float, float, float]
    spectral_density: Callable[[float], float] | Sequence[tuple[float, float]]

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise InputError("noise direction must be a unit vector")
        object.__setattr__(self, "direction", tuple(float(c) for c in d))
        if not callable(self.spectral_density):
            table = np.asarray(self.spectral_density, dtype=float)
            if table.ndim != 2 or table.shape[1] != 2 or len(table) < 1:
                raise InputError("tabulated spectral density must be (omega, S_E) pairs")
            if np.any(table[:, 1] < 0):
                raise InputError("spectral density must be non-negative")
            if np.any(np.diff(table[:, 0]) <= 0):
                raise InputError("tabulated frequencies must increase")
            object.__setattr__(self, "spectral_density", tuple(map(tuple, table)))

    def __call__(self, omega: float) -> float:
        if callable(self.spectral_density):
            val = float(self.spectral_density(omega))
        else:
            table = np.asarray(self.spectral_density)
            if len(table) == 1:
                if omega != table[0, 0]:
                    raise InputError(f"spectral density undefined at omega = {omega:g}")
                val = float(table[0, 1])
            else:
                if not table[0, 0] <= omega <= table[-1, 0]:
                    raise InputError(f"spectral density undefined at omega = {omega:g}")
                val = float(np.interp(omega, table[:, 0], table[:, 1]))
        if not (val >= 0 and math.isfinite(val)):
            raise InputError(f"spectral density invalid at omega = {omega:g}")
        return val


def anomalous_heating_rate(modes: NormalModeSet, alpha: int, noise: FieldNoiseSpec) -> float:
    """Heating rate from the ground state (quanta/s) in the uniform-field limit."""
    w2 = modes.eigenvalues[alpha]
    if not w2 > 0:
        raise UnstableModeError(f"mode {alpha} is unstable")
    w = math.sqrt(w2)
    u = np.asarray(noise.direction)
    vec = modes.vector(alpha)
    proj = sum(sp.q * float(u @ vec[j]) / math.sqrt(sp.mass) for j, sp in enumerate(modes.species))
    return noise(w) * proj * proj / (4.0 * HBAR * w)


# ---------------------------------------------------------------------------
# gates and carrier


def gate_infidelity(eta: float, nbar: float) -> float:
    if eta < 0 or nbar < 0:
        raise InputError("eta and nbar must be non-negative")
    return 0.3 * math.pi ** 2 * eta ** 4 * nbar * (nbar + 1.0)


def nbar_for_infidelity(eta: float, target: float) -> float:
    """Largest mean occupation keeping ``gate_infidelity`` at ``target``."""
    if not eta > 0 or target < 0:
        raise InputError("need eta > 0 and a non-negative target")
    c = target / (0.3 * math.pi ** 2 * eta ** 4)
    return 0.5 * (math.sqrt(1.0 + 4.0 * c) - 1.0)


def carrier_rabi_factor(etas, ns) -> float:
    """Carrier Rabi frequency relative to the bare value, to second order in eta."""
    eta = np.atleast_1d(np.asarray(etas, dtype=float))
    n = np.atleast_1d(np.asarray(ns, dtype=float))
    if eta.shape != n.shape:
        raise InputError("need one occupation per mode")
    terms = eta ** 2 * (2.0 * n + 1.0)
    if np.any(terms >= 1.0):
        warnings.warn(
            "eta^2 (2n+1) >= 1: outside the Lamb-Dicke regime, factor is only indicative",
            ModelAssumptionWarning,
            stacklevel=2,
        )
    return float(1.0 - 0.5 * np.sum(terms))


# ---------------------------------------------------------------------------
# report


def rate_report(modes: NormalModeSet, laser: LaserField, ion: int, *, force: bool = False) -> dict:
    """Per-mode Lamb-Dicke parameter, cooling and heating rates and Doppler
    equilibrium for a beam on ion ``ion``.

    Raises :class:`ModelAssumptionError` when the linewidth is below the
    highest mode frequency unless ``force`` is set.
    """
    stable_w = modes.frequencies[modes.stable]
    if not force and stable_w.size and laser.linewidth < float(np.max(stable_w)):
        raise ModelAssumptionError(
            "linewidth below the highest mode frequency; rate equations do not apply (use force)"
        )
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelAssumptionWarning)
        for a in range(modes.n_modes):
            row = {"mode": a, "label": modes.labels()[a], "frequency_MHz": float(modes.frequencies_hz[a] / 1e6)}
            if not modes.stable[a]:
                row.update(eta=None, cooling_rate_n0_quanta_per_s=None, heating_rate_quanta_per_s=None, nbar_ss=None)
                rows.append(row)
                continue
            c = mode_coupling(modes, laser, ion, a)
            row["eta"] = c.eta
            # signed dn/dt at n = 0; negative means cooling, +0.0 drops the sign of an exact zero
            row["cooling_rate_n0_quanta_per_s"] = doppler_rate_from_coupling(c, laser, 0.0) + 0.0
            row["heating_rate_quanta_per_s"] = recoil_heating_from_coupling(c, laser)
            try:
                row["nbar_ss"] = doppler_equilibrium_from_coupling(c, laser)
            except ModelAssumptionError:
                row["nbar_ss"] = None
            rows.append(row)
    return {
        "schema_version": SCHEMA_VERSION,
        "ion": ion,
        "species": modes.species[ion].name,
        "saturation": laser.saturation,
        "detuning_over_linewidth": laser.detuning / laser.linewidth,
        "low_saturation_assumed": laser.saturation <= 0.1,
        "modes": rows,
    }


__all__ = [
    "FieldNoiseSpec",
    "LaserField",
    "ModeCoupling",
    "ModelAssumptionWarning",
    "anomalous_heating_rate",
    "carrier_rabi_factor",
    "doppler_equilibrium",
    "doppler_rate",
    "excited_population",
    "excited_population_slope",
    "find_mode",
    "gate_infidelity",
    "mode_coupling",
    "nbar_for_infidelity",
    "radiation_pressure_force",
    "recoil_heating_rate",
    "rate_report",
    "scattering_rate",
    "wavevector",
]
