"""The singlet joint law on {-1,+1}^2 and the functionals built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import InvalidDirectionError, RangeError

UNIT_TOL = 1e-9
RENORMALIZE_TOL = 1e-6
SUM_TOL = 1e-12

# Cell order used everywhere: (x, y) = (+,+), (+,-), (-,+), (-,-).
CELLS: tuple[tuple[int, int], ...] = ((1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class Direction:
    """A unit vector in R^3.

    Inputs within 1e-6 of unit norm are renormalized; anything farther is
    rejected with :class:`InvalidDirectionError`.
    """

    x: float
    y: float
    z: float

    def __post_init__(self):
        comps = (float(self.x), float(self.y), float(self.z))
        if not all(math.isfinite(c) for c in comps):
            raise InvalidDirectionError(f"non-finite direction {comps}")
        norm = math.sqrt(sum(c * c for c in comps))
        if abs(norm - 1.0) > RENORMALIZE_TOL:
            raise InvalidDirectionError(f"direction {comps} has norm {norm!r}, expected 1")
        if abs(norm - 1.0) > 0.0:
            comps = tuple(c / norm for c in comps)
        object.__setattr__(self, "x", comps[0])
        object.__setattr__(self, "y", comps[1])
        object.__setattr__(self, "z", comps[2])

    @classmethod
    def from_angles(cls, theta_deg: float, phi_deg: float = 0.0) -> Direction:
        """Polar angle from +z and azimuth from +x, both in degrees."""
        t, p = math.radians(theta_deg), math.radians(phi_deg)
        return cls(math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), math.cos(t))

    @classmethod
    def planar(cls, angle_deg: float) -> Direction:
        """Direction in the x-z plane at ``angle_deg`` from +z."""
        return cls.from_angles(angle_deg, 0.0)

    @classmethod
    def coerce(cls, value) -> Direction:
        if isinstance(value, Direction):
            return value
        arr = np.asarray(value, dtype=float).reshape(-1)
        if arr.size != 3:
            raise InvalidDirectionError(f"expected 3 components, got {arr.size}")
        return cls(*arr)

    def as_array(self) -> np.ndarray:
        arr = np.array([self.x, self.y, self.z])
        arr.setflags(write=False)
        return arr

    def dot(self, other: Direction) -> float:
        d = self.x * other.x + self.y * other.y + self.z * other.z
        return min(1.0, max(-1.0, d))

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.z]


@dataclass(frozen=True)
class SettingsQuad:
    """Two settings per side, as used by the CHSH functional."""

    a: Direction
    a_prime: Direction
    b: Direction
    b_prime: Direction

    def pairs(self) -> tuple[tuple[Direction, Direction], ...]:
        """Setting pairs in functional order: (a,b), (a',b), (a',b'), (a,b')."""
        return (
            (self.a, self.b),
            (self.a_prime, self.b),
            (self.a_prime, self.b_prime),
            (self.a, self.b_prime),
        )

    @classmethod
    def planar(cls, a: float = 0.0, a_prime: float = 90.0, b: float = 45.0, b_prime: float = 135.0):
        return cls(Direction.planar(a), Direction.planar(a_prime), Direction.planar(b), Direction.planar(b_prime))


@dataclass(frozen=True)
class JointLaw:
    p_pp: float
    p_pm: float
    p_mp: float
    p_mm: float

    def __post_init__(self):
        vals = self.as_tuple()
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise RangeError(f"probabilities must lie in [0, 1]: {vals}")
        if abs(math.fsum(vals) - 1.0) > SUM_TOL:
            raise RangeError(f"probabilities must sum to 1: {vals}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.p_pp, self.p_pm, self.p_mp, self.p_mm)

    def prob(self, x: int, y: int) -> float:
        return self.as_tuple()[CELLS.index((x, y))]

    def correlation(self) -> float:
        return self.p_pp - self.p_pm - self.p_mp + self.p_mm


def _dot(a, b) -> float:
    return Direction.coerce(a).dot(Direction.coerce(b))


def law_from_dot(dot: float) -> JointLaw:
    """Singlet table for a given inner product a.b."""
    if not -1.0 - UNIT_TOL <= dot <= 1.0 + UNIT_TOL:
        raise RangeError(f"inner product {dot} outside [-1, 1]")
    dot = min(1.0, max(-1.0, dot))
    same = 0.25 * (1.0 - dot)
    diff = 0.25 * (1.0 + dot)
    return JointLaw(same, diff, diff, same)


def singlet_law(a, b) -> JointLaw:
    """p(x, y; a, b) = (1 - x y a.b) / 4."""
    return law_from_dot(_dot(a, b))


def singlet_correlation(a, b) -> float:
    return -_dot(a, b)


def marginal(law: JointLaw, party: Literal["A", "B"]) -> float:
    """P(outcome = +1) for party A (x) or party B (y)."""
    if party == "A":
        return law.p_pp + law.p_pm
    if party == "B":
        return law.p_pp + law.p_mp
    raise ValueError(f"party must be 'A' or 'B', got {party!r}")


def variation_distance(p: JointLaw, q: JointLaw) -> float:
    return 0.5 * math.fsum(abs(u - v) for u, v in zip(p.as_tuple(), q.as_tuple()))


def chsh(e_ab: float, e_apb: float, e_apbp: float, e_abp: float) -> float:
    """|E(a,b) + E(a',b) + E(a',b') - E(a,b')|."""
    for e in (e_ab, e_apb, e_apbp, e_abp):
        if not -1.0 <= e <= 1.0:
            raise RangeError(f"correlation {e} outside [-1, 1]")
    return abs(e_ab + e_apb + e_apbp - e_abp)


def tv_continuity_bound(a, a_rep, b, b_rep) -> float:
    """Distance between singlet laws at (a, b) and at representatives.

    Every cell of the table moves by exactly |delta(a.b)|/4, so the bound is
    attained.
    """
    return 0.5 * abs(_dot(a, b) - _dot(a_rep, b_rep))


def random_directions(rng: np.random.Generator, n: int) -> list[Direction]:
    z = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2 * math.pi, n)
    r = np.sqrt(1.0 - z * z)
    return [Direction(float(r[i] * math.cos(phi[i])), float(r[i] * math.sin(phi[i])), float(z[i])) for i in range(n)]
