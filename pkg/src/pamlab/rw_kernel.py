"""Exact transition kernels and collision functionals of the simple
continuous-time random walk on the d-dimensional integer lattice.

Conventions
-----------
The walk has total jump rate ``kappa`` and generator ``kappa * Delta`` with

    Delta f(x) = (1/2d) * sum_{|e|=1} f(x+e) - f(x).

Each coordinate is then an independent one-dimensional walk of total rate
``kappa/d``, so the kernel factorizes:

    p_t(x) = prod_i exp(-kappa*t/d) * I_{|x_i|}(kappa*t/d)

with I_n the modified Bessel function of the first kind.  The difference of
two independent rate-``kappa`` walks is itself a simple walk of total rate
``2*kappa``, which is what makes the collision functionals below closed-form.

Every evaluation goes through ``scipy.special.ive`` (the exponentially
scaled Bessel function), which computes the factor exp(-z)*I_n(z) directly
at full double precision; the absolute error per kernel value is below
1e-14, well inside the 1e-12 budget the rest of the package assumes.

This module is deliberately free of any simulation state: everything here
is a pure function of its arguments, and serves as the deterministic oracle
against which the stochastic modules are tested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np
from scipy import integrate, special

Site = tuple[int, ...]

__all__ = [
    "Site",
    "as_site",
    "axis_kernel",
    "heat_kernel",
    "kernel_grid",
    "collision_kernel",
    "collision_green",
    "collision_green_inf",
    "two_point_semigroup",
    "containment_radius",
    "KernelTable",
]


def as_site(x: Sequence[int] | int, d: int) -> Site:
    """Coerce ``x`` to a length-``d`` tuple of ints, validating the shape.

    Accepts a bare integer when d == 1 as a convenience.
    """
    if isinstance(x, (int, np.integer)):
        coords: tuple[int, ...] = (int(x),)
    else:
        coords = tuple(int(c) for c in x)
    if len(coords) != d:
        raise ValueError(f"site {coords!r} has {len(coords)} coordinates, expected d={d}")
    return coords


def _check_time_rate(t, kappa: float) -> None:
    if not np.all(np.asarray(t) >= 0.0):
        raise ValueError(f"time must be nonnegative, got {t!r}")
    if not (kappa > 0.0):
        raise ValueError(f"jump rate must be positive, got {kappa!r}")


def axis_kernel(t: float, axis_rate: float, radius: int) -> np.ndarray:
    """One-dimensional kernel on the sites -radius..radius.

    ``axis_rate`` is the total jump rate of the single coordinate, so the
    entry for displacement n is exp(-axis_rate*t) * I_{|n|}(axis_rate*t).
    At t = 0 (or rate 0) this is an exact Kronecker delta.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    orders = np.abs(np.arange(-radius, radius + 1))
    return special.ive(orders, axis_rate * t)


def heat_kernel(t: float, x: Sequence[int] | int, d: int, kappa: float) -> float:
    """Probability p_t(x) that the rate-``kappa`` walk started at 0 sits at x.

    Computed as the product over coordinates of one-dimensional kernels,
    each coordinate being a rate-``kappa/d`` walk.
    """
    _check_time_rate(t, kappa)
    if d < 1:
        raise ValueError("dimension must be at least 1")
    site = as_site(x, d)
    z = kappa * t / d
    out = 1.0
    for c in site:
        out *= float(special.ive(abs(c), z))
    return out


def kernel_grid(t: float, d: int, kappa: float, radius: int) -> np.ndarray:
    """Full kernel on the centered box of the given radius.

    Returns an array of shape (2*radius+1,)*d whose entry at index
    (i_1,...,i_d) is p_t(i_1-radius, ..., i_d-radius).  Separable, so it is
    assembled as an outer product of one axis kernel.
    """
    _check_time_rate(t, kappa)
    axis = axis_kernel(t, kappa / d, radius)
    grid = axis
    for _ in range(d - 1):
        grid = np.multiply.outer(grid, axis)
    return grid


def collision_kernel(t, d: int, kappa: float = 1.0):
    """r(t): probability two independent rate-``kappa`` walks started together
    occupy the same site at time t.

    Equals the return probability of the difference walk, a simple walk of
    total rate 2*kappa, hence exp(-2*kappa*t/d)*I_0(2*kappa*t/d) per
    coordinate.  Satisfies r(t) = sum_z p_t(z)^2.  Accepts scalar or array
    times; returns a float for scalar input.
    """
    _check_time_rate(t, kappa)
    out = special.ive(0, 2.0 * kappa * np.asarray(t) / d) ** d
    return float(out) if np.isscalar(t) or np.ndim(t) == 0 else out


@lru_cache(maxsize=4096)
def collision_green(t: float, d: int, kappa: float = 1.0) -> float:
    """R(t) = integral of the collision kernel over [0, t].

    Adaptive quadrature with absolute tolerance 1e-9.  Diverges like sqrt(t)
    in d=1 and log(t) in d=2 as t grows, but is finite for every finite t.
    """
    _check_time_rate(t, kappa)
    if t == 0.0:
        return 0.0
    val, _err = integrate.quad(
        lambda s: collision_kernel(s, d, kappa),
        0.0,
        t,
        epsabs=1e-9,
        epsrel=1e-10,
        limit=400,
    )
    return float(val)


@lru_cache(maxsize=256)
def collision_green_inf(d: int, kappa: float = 1.0) -> float:
    """R(infinity), the expected total collision time of two walks.

    Infinite for d in {1, 2} (the difference walk is recurrent).  For d >= 3
    the integral converges; it is evaluated as quadrature on [0, T*] plus a
    local-CLT tail correction

        r(s) ~ (d/(4*pi*kappa*s))^{d/2} * (1 + d^2/(16*kappa*s) + ...)

    integrated in closed form on [T*, infinity).  T* is grown until the
    second-order tail term drops below 1e-7, so the tail correction itself
    is accurate to well under 1e-6.
    """
    if d < 1:
        raise ValueError("dimension must be at least 1")
    if not (kappa > 0.0):
        raise ValueError(f"jump rate must be positive, got {kappa!r}")
    if d <= 2:
        return math.inf

    c = (d / (4.0 * math.pi * kappa)) ** (d / 2.0)

    def tail_terms(tstar: float) -> tuple[float, float]:
        lead = c * tstar ** (1.0 - d / 2.0) / (d / 2.0 - 1.0)
        nxt = c * (d * d / (16.0 * kappa)) * tstar ** (-d / 2.0) / (d / 2.0)
        return lead, nxt

    tstar = 500.0 / kappa
    while True:
        _lead, nxt = tail_terms(tstar)
        if nxt < 1e-7:
            break
        tstar *= 2.0
    body, _err = integrate.quad(
        lambda s: collision_kernel(s, d, kappa),
        0.0,
        tstar,
        epsabs=1e-10,
        epsrel=1e-11,
        limit=800,
    )
    lead, nxt = tail_terms(tstar)
    return float(body + lead + nxt)


def two_point_semigroup(
    t: float,
    x1: Sequence[int] | int,
    x2: Sequence[int] | int,
    kappa: float = 1.0,
) -> float:
    """Probability two independent rate-``kappa`` walks started at x1, x2
    occupy a common site at time t.

    By translation invariance this is the difference-walk kernel evaluated
    at the displacement x1 - x2, so it is bounded by r(t) with equality on
    the diagonal.
    """
    a1 = np.atleast_1d(np.asarray(x1, dtype=np.int64))
    a2 = np.atleast_1d(np.asarray(x2, dtype=np.int64))
    if a1.shape != a2.shape or a1.ndim != 1:
        raise ValueError(f"site dimensions differ: {a1.shape} vs {a2.shape}")
    d = a1.size
    return heat_kernel(t, tuple(int(v) for v in (a1 - a2)), d, 2.0 * kappa)


def containment_radius(kappa: float, horizon: float) -> int:
    """Box radius that contains the walk up to the horizon for all practical
    purposes: ceil(kappa*T + 6*sqrt(kappa*T) + 10), a Poisson tail bound on
    the total jump count (escape probability below 1e-9).
    """
    if kappa < 0 or horizon < 0:
        raise ValueError("rate and horizon must be nonnegative")
    m = kappa * horizon
    return int(math.ceil(m + 6.0 * math.sqrt(m) + 10.0))


@dataclass(frozen=True)
class KernelTable:
    """Kernel values cached on a fixed time grid over a centered box.

    The table is immutable once built and safe to share across threads.
    ``grids`` maps each time to the full kernel array; ``prob`` gives
    dictionary-style access by (time, site).
    """

    d: int
    rate: float
    times: tuple[float, ...]
    radius: int
    grids: dict[float, np.ndarray] = field(repr=False)

    @classmethod
    def build(
        cls,
        d: int,
        rate: float,
        times: Sequence[float],
        radius: int | None = None,
    ) -> "KernelTable":
        ts = tuple(sorted(float(t) for t in times))
        if not ts:
            raise ValueError("need at least one evaluation time")
        if any(t < 0 for t in ts):
            raise ValueError("times must be nonnegative")
        if radius is None:
            radius = containment_radius(rate, ts[-1])
        grids = {t: kernel_grid(t, d, rate, radius) for t in ts}
        table = cls(d=d, rate=rate, times=ts, radius=radius, grids=grids)
        table._check_invariants()
        return table

    def _check_invariants(self) -> None:
        for t, g in self.grids.items():
            if g.min() < 0.0 or g.max() > 1.0:
                raise ValueError(f"kernel value outside [0,1] at t={t}")
            if abs(g.sum() - 1.0) > 1e-9:
                raise ValueError(
                    f"kernel mass {g.sum():.12f} at t={t} outside normalization "
                    "band; enlarge the radius"
                )
            if t == 0.0:
                center = (self.radius,) * self.d
                if g[center] != 1.0 or g.sum() != 1.0:
                    raise ValueError("time-zero kernel is not a point mass")

    def prob(self, t: float, site: Sequence[int] | int) -> float:
        """p_t(site) from the cache; raises KeyError for uncached times."""
        coords = as_site(site, self.d)
        if any(abs(c) > self.radius for c in coords):
            return 0.0
        idx = tuple(c + self.radius for c in coords)
        return float(self.grids[float(t)][idx])

    def rows(self) -> Iterator[tuple[float, Site, float]]:
        """Yield (t, site, p) in deterministic (time, site) order."""
        side = 2 * self.radius + 1
        for t in self.times:
            g = self.grids[t]
            for flat, p in enumerate(g.ravel()):
                idx = np.unravel_index(flat, (side,) * self.d)
                site = tuple(int(i) - self.radius for i in idx)
                yield t, site, float(p)

    @property
    def values(self) -> dict[tuple[float, Site], float]:
        """Materialized (time, site) -> probability map.  Large boxes make
        this big; prefer ``prob`` for point queries."""
        return {(t, site): p for t, site, p in self.rows()}
