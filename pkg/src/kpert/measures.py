"""Perturbing measures on space-time.

A measure splits into a density part q(u, z), integrated against
du x dm(z), and an atomic-in-time part sum_i eta_i * delta_{u_i} (x) m.
Either part may be restricted to a time interval; restriction zeroes the
density outside the interval and drops atoms whose times fall outside
(endpoint membership decided by the interval's closedness flags).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from kpert.bounds import Interval

FULL_LINE = Interval(-np.inf, np.inf, closed_lo=False, closed_hi=False)


@dataclass(frozen=True)
class Atom:
    time: float
    weight: float

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("atom weights must be positive")


@dataclass(frozen=True)
class PerturbingMeasure:
    density: object = None          # callable q(u, z) -> nonneg, or None
    atoms: tuple = ()
    time_support: Interval = FULL_LINE

    def __post_init__(self):
        atoms = tuple(self.atoms)
        times = [a.time for a in atoms]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("atom times must be strictly increasing")
        object.__setattr__(self, "atoms", atoms)

    @property
    def is_zero(self) -> bool:
        return self.density is None and not self.atoms

    def q(self, u, z):
        """Density part gated by the time support (0 outside).

        u must already carry the full result shape (z may add a trailing
        spatial axis in dimension >= 2).
        """
        u = np.asarray(u, dtype=float)
        if self.density is None:
            return np.zeros(u.shape)
        vals = np.asarray(self.density(u, np.asarray(z, dtype=float)),
                          dtype=float)
        return np.where(self.time_support.contains(u), vals, 0.0)

    def active_atoms(self):
        return tuple(a for a in self.atoms
                     if bool(self.time_support.contains(a.time)))


ZERO_MEASURE = PerturbingMeasure()


def restrict_measure(mu: PerturbingMeasure, interval: Interval) -> PerturbingMeasure:
    """Restrict both parts to interval x (space); idempotent."""
    lo = max(mu.time_support.lo, interval.lo)
    hi = min(mu.time_support.hi, interval.hi)
    closed_lo = (mu.time_support.closed_lo if lo == mu.time_support.lo
                 else interval.closed_lo)
    if lo == mu.time_support.lo == interval.lo:
        closed_lo = mu.time_support.closed_lo and interval.closed_lo
    closed_hi = (mu.time_support.closed_hi if hi == mu.time_support.hi
                 else interval.closed_hi)
    if hi == mu.time_support.hi == interval.hi:
        closed_hi = mu.time_support.closed_hi and interval.closed_hi
    if lo > hi:
        lo, hi, closed_lo, closed_hi = 0.0, 0.0, False, False
    support = Interval(lo, hi, closed_lo, closed_hi)
    atoms = tuple(a for a in mu.atoms if bool(support.contains(a.time)))
    return PerturbingMeasure(mu.density, atoms, support)


# Density convention: q(u, z) with u of shape S and z of shape S (dim 1)
# or S + (dim,) (dim >= 2); the result has shape S.

@dataclass(frozen=True)
class ConstDensity:
    """q(u, z) = lam everywhere (Lebesgue-in-time x Lebesgue-in-space)."""

    lam: float
    dim: int = 1

    def __call__(self, u, z):
        z = np.asarray(z, dtype=float)
        zs = z[..., 0] if self.dim > 1 else z
        shape = np.broadcast(np.asarray(u, dtype=float), zs).shape
        return np.full(shape, float(self.lam))


@dataclass(frozen=True)
class PowerLawSpaceDensity:
    """q(u, z) = |z|**(-1+eps); Kato-class for small time windows."""

    eps: float
    dim: int = 1

    def __call__(self, u, z):
        z = np.asarray(z, dtype=float)
        if self.dim > 1:
            r = np.sqrt(np.sum(z * z, axis=-1))
        else:
            r = np.abs(z)
        r = np.where(r > 0, r, np.inf)
        out = r ** (self.eps - 1.0)
        shape = np.broadcast(np.asarray(u, dtype=float), out).shape
        return np.broadcast_to(out, shape).copy()


@dataclass(frozen=True)
class CornerPowerDensity:
    """q(u, z) = c (u + z)**(-p) on the positive quadrant, else 0."""

    c: float
    p: float

    def __post_init__(self):
        if not 0.0 < self.p < 0.5:
            raise ValueError("exponent must lie in (0, 1/2)")
        if self.c <= 0:
            raise ValueError("coefficient must be positive")

    def __call__(self, u, z):
        u = np.asarray(u, dtype=float)
        z = np.asarray(z, dtype=float)
        ok = (u > 0) & (z > 0)
        s = np.where(ok, u + z, 1.0)
        return np.where(ok, self.c * s ** (-self.p), 0.0)


def measure_from_config(doc: dict) -> PerturbingMeasure:
    """Build a measure from the config JSON fragment.

    {"density": {"kind": "const", "lambda": ..} | {"kind": "q0", "c": ..,
    "p": ..} | {"kind": "power", "eps": ..}, "atoms": [{"u": .., "eta": ..}],
    "support": [a, b]}
    """
    density = None
    dd = doc.get("density")
    if dd:
        kind = dd.get("kind")
        dim = int(dd.get("dim", 1))
        if kind == "const":
            density = ConstDensity(float(dd["lambda"]), dim)
        elif kind == "q0":
            density = CornerPowerDensity(float(dd["c"]), float(dd["p"]))
        elif kind == "power":
            density = PowerLawSpaceDensity(float(dd["eps"]), dim)
        else:
            raise ValueError(f"unknown density kind {kind!r}")
    atoms = tuple(Atom(float(a["u"]), float(a["eta"]))
                  for a in doc.get("atoms", []))
    support = FULL_LINE
    if "support" in doc:
        lo, hi = doc["support"]
        support = Interval(float(lo), float(hi))
    return PerturbingMeasure(density, atoms, support)
