"""Fixed CODATA-2018 constants shared by every module."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.054571817e-34
    epsilon_0: float = 8.8541878128e-12
    elementary_charge: float = 1.602176634e-19
    atomic_mass_unit: float = 1.66053906660e-27

    @property
    def coulomb_constant(self) -> float:
        """1/(4 pi eps0), in SI."""
        return 1.0 / (4.0 * math.pi * self.epsilon_0)


CONSTANTS = PhysicalConstants()

HBAR = CONSTANTS.hbar
EPSILON_0 = CONSTANTS.epsilon_0
ELEMENTARY_CHARGE = CONSTANTS.elementary_charge
AMU = CONSTANTS.atomic_mass_unit
COULOMB_K = CONSTANTS.coulomb_constant

TWO_PI = 2.0 * math.pi
MHZ = 1e6
