"""Gravitational self-energy of displaced uniform spheres and the resulting
Diosi-Penrose collapse time.

Energies are in joules, lengths in metres, times in seconds. The overlap
polynomial comes in two flavours; ``ContinuityCorrected`` (cubic coefficient
5/4) is the default because it is the only one that joins the separated-regime
formula at ``lambda == 1`` and agrees with the voxel oracle in
:mod:`dpsim.oracle`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DEFAULT_CONSTANTS",
    "DomainError",
    "MassBody",
    "OverlapCoefficientVariant",
    "PhysicalConstants",
    "RegimeError",
    "SuperpositionGeometry",
    "collapse_rate",
    "collapse_time",
    "lambda_ratio",
    "mount_reaction_contribution",
    "self_energy",
    "self_energy_overlapping",
    "self_energy_profile",
    "self_energy_separated",
    "system_self_energy",
]

PENROSE_GAMMA = 1.0 / (8.0 * math.pi)


class DomainError(ValueError):
    """An argument lies outside the physical domain of the operation."""


class RegimeError(ValueError):
    """Lambda is outside the range of validity of the requested formula."""


@dataclass(frozen=True)
class PhysicalConstants:
    G: float = 6.674e-11
    hbar: float = 1.0546e-34

    def __post_init__(self):
        if not (self.G > 0 and self.hbar > 0):
            raise DomainError("physical constants must be strictly positive")


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class MassBody:
    """Rigid body represented by a uniform sphere of equal mass and volume.

    ``shape_factor`` multiplies every self-energy computed for the body. It
    stands in for the flattening of real (oblate) mirrors and defaults to 1.
    """

    mass: float
    radius: float
    label: str = "body"
    shape_factor: float = 1.0

    def __post_init__(self):
        if not self.mass > 0:
            raise DomainError(f"{self.label}: mass must be > 0, got {self.mass!r}")
        if not self.radius > 0:
            raise DomainError(f"{self.label}: radius must be > 0, got {self.radius!r}")
        if not self.shape_factor > 0:
            raise DomainError(f"{self.label}: shape_factor must be > 0")

    @classmethod
    def from_density(cls, mass: float, density: float, label: str = "body",
                     shape_factor: float = 1.0) -> "MassBody":
        """Equivalent sphere for a body of given mass and bulk density."""
        if not density > 0:
            raise DomainError("density must be > 0")
        radius = (3.0 * mass / (4.0 * math.pi * density)) ** (1.0 / 3.0)
        return cls(mass, radius, label, shape_factor)

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.radius**3


@dataclass(frozen=True)
class SuperpositionGeometry:
    body: MassBody
    displacement: float

    def __post_init__(self):
        if not self.displacement >= 0:
            raise DomainError(f"displacement must be >= 0, got {self.displacement!r}")

    @property
    def lam(self) -> float:
        return lambda_ratio(self.displacement, self.body.radius)


class OverlapCoefficientVariant(enum.Enum):
    PaperPrinted = "paper_printed"
    ContinuityCorrected = "continuity_corrected"

    @classmethod
    def parse(cls, value: "str | OverlapCoefficientVariant") -> "OverlapCoefficientVariant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise ValueError(f"unknown overlap variant {value!r}; "
                         f"expected one of {[m.value for m in cls]}")


# (quadratic, cubic, quintic) coefficients of the overlap polynomial
_OVERLAP_COEFFS = {
    OverlapCoefficientVariant.PaperPrinted: (5.0 / 3.0, 5.0 / 3.0, 1.0 / 6.0),
    OverlapCoefficientVariant.ContinuityCorrected: (5.0 / 3.0, 5.0 / 4.0, 1.0 / 6.0),
}


def lambda_ratio(displacement: float, radius: float) -> float:
    """Branch separation in units of the body diameter."""
    if not radius > 0:
        raise DomainError(f"radius must be > 0, got {radius!r}")
    if not displacement >= 0:
        raise DomainError(f"displacement must be >= 0, got {displacement!r}")
    return displacement / (2.0 * radius)


def _scale(body: MassBody, c: PhysicalConstants) -> float:
    return 6.0 * c.G * body.mass**2 / (5.0 * body.radius) * body.shape_factor


def self_energy_separated(body: MassBody, lam: float,
                          c: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    if not lam >= 1.0:
        raise RegimeError(f"lambda={lam!r} < 1: use self_energy_overlapping")
    return _scale(body, c) * (1.0 - 5.0 / (12.0 * lam))


def self_energy_overlapping(body: MassBody, lam: float,
                            variant: OverlapCoefficientVariant = OverlapCoefficientVariant.ContinuityCorrected,
                            c: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    if not 0.0 <= lam <= 1.0:
        raise RegimeError(f"lambda={lam!r} outside [0, 1]: use self_energy_separated")
    a2, a3, a5 = _OVERLAP_COEFFS[OverlapCoefficientVariant.parse(variant)]
    lam2 = lam * lam
    # nested form keeps the tiny-lambda result exactly quadratic
    return _scale(body, c) * (lam2 * (a2 - lam * (a3 - a5 * lam2)))


def self_energy(geometry: SuperpositionGeometry,
                variant: OverlapCoefficientVariant = OverlapCoefficientVariant.ContinuityCorrected,
                c: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    lam = geometry.lam
    if lam <= 1.0:
        return self_energy_overlapping(geometry.body, lam, variant, c)
    return self_energy_separated(geometry.body, lam, c)


def self_energy_profile(body: MassBody, displacements,
                        variant: OverlapCoefficientVariant = OverlapCoefficientVariant.ContinuityCorrected,
                        c: PhysicalConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Vectorised :func:`self_energy` over an array of displacements."""
    d = np.asarray(displacements, dtype=np.float64)
    if np.any(d < 0):
        raise DomainError("displacements must be >= 0")
    a2, a3, a5 = _OVERLAP_COEFFS[OverlapCoefficientVariant.parse(variant)]
    lam = d / (2.0 * body.radius)
    lam2 = lam * lam
    shape = np.where(lam <= 1.0, lam2 * (a2 - lam * (a3 - a5 * lam2)),
                     1.0 - 5.0 / (12.0 * np.maximum(lam, 1.0)))
    return _scale(body, c) * shape


def collapse_time(E_g: float, gamma: float = PENROSE_GAMMA,
                  c: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    """``gamma * hbar / E_g``; ``math.inf`` when nothing is displaced."""
    if not gamma > 0:
        raise DomainError(f"gamma must be > 0, got {gamma!r}")
    if E_g < 0 or math.isnan(E_g):
        raise DomainError(f"E_g must be >= 0, got {E_g!r}")
    if E_g == 0:
        return math.inf
    return gamma * c.hbar / E_g


def collapse_rate(E_g: float, gamma: float = PENROSE_GAMMA,
                  c: PhysicalConstants = DEFAULT_CONSTANTS) -> float:
    if not gamma > 0:
        raise DomainError(f"gamma must be > 0, got {gamma!r}")
    if E_g < 0 or math.isnan(E_g):
        raise DomainError(f"E_g must be >= 0, got {E_g!r}")
    return E_g / (gamma * c.hbar)


def mount_reaction_contribution(mirror: MassBody, mirror_displacement: float, mount: MassBody,
                                variant: OverlapCoefficientVariant = OverlapCoefficientVariant.ContinuityCorrected,
                                c: PhysicalConstants = DEFAULT_CONSTANTS) -> tuple[float, float]:
    """Recoil of the mount by momentum conservation and its own self-energy.

    Returns ``(mount_displacement, E_g_mount)``. The caller adds the energy
    to the system total.
    """
    mount_disp = mirror.mass / mount.mass * mirror_displacement
    E = self_energy(SuperpositionGeometry(mount, mount_disp), variant, c)
    return mount_disp, E


def system_self_energy(geometries: Iterable[SuperpositionGeometry],
                       extra_component_rates: Sequence[float] = (),
                       variant: OverlapCoefficientVariant = OverlapCoefficientVariant.ContinuityCorrected,
                       gamma: float = PENROSE_GAMMA,
                       c: PhysicalConstants = DEFAULT_CONSTANTS) -> tuple[float, float]:
    """Total energy and total collapse rate of independent displaced bodies.

    Bodies are treated as far apart from each other, so cross terms between
    them are dropped. Components known only by a collapse time enter as
    additive rates.
    """
    E_total = math.fsum(self_energy(g, variant, c) for g in geometries)
    extra = math.fsum(extra_component_rates)
    if extra < 0:
        raise DomainError("extra component rates must be >= 0")
    return E_total, collapse_rate(E_total, gamma, c) + extra
