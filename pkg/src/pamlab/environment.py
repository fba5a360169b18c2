"""Reproducible Gaussian environment on the lattice-time grid.

Each lattice site x carries an independent Brownian motion; the solver only
ever consumes its increments over the time steps, ΔB_x(k) ~ N(0, dt).  The
increments are generated counter-based: a Philox generator keyed by
(master_seed, replica_index) produces a flat stream of 64-bit words, and the
increment for (site, step) always reads the word at index

    step * S + flat(site),      S = (2*box_radius + 1)^d,

where flat() is the offset-shifted mixed-radix (row-major) index of the site
inside the addressing box.  Nothing is stored: any word can be regenerated
on demand, in any order, by any process, which is what lets the field solver
and the path sampler consult one and the same environment realization.

The flat index is fixed by the grid's own box_radius, so queries are
independent of the window actually being used; two grids only agree when
their addressing radii agree, which the run configuration guarantees by
fixing one box radius per run.

Gaussians come from the inverse normal CDF applied to the 53-bit uniform of
each word (one draw per counter, no rejection), scaled by sqrt(dt).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np
from numpy.lib.stride_tricks import as_strided
from numpy.random import Philox
from scipy.special import ndtri

from .rw_kernel import as_site

__all__ = ["EnvironmentGrid"]

_U64 = (1 << 64) - 1
# top 53 bits of a word -> uniform on (0, 1), strictly inside the interval
_INV53 = 2.0 ** -53
_HALF_ULP = 2.0 ** -54


@dataclass(frozen=True)
class EnvironmentGrid:
    """Deterministic increment source for one (seed, replica) pair."""

    master_seed: int
    replica_index: int
    dt: float
    d: int
    box_radius: int

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.d < 1:
            raise ValueError("dimension must be at least 1")
        if self.box_radius < 0:
            raise ValueError("box_radius must be nonnegative")

    # -- flat addressing --------------------------------------------------

    @property
    def side(self) -> int:
        return 2 * self.box_radius + 1

    @property
    def sites_per_step(self) -> int:
        return self.side**self.d

    def _strides(self) -> np.ndarray:
        # row-major: last coordinate varies fastest
        return self.side ** np.arange(self.d - 1, -1, -1, dtype=np.int64)

    def flat_index(self, sites: np.ndarray) -> np.ndarray:
        """Row-major word offset of sites (shape (..., d)) within one step."""
        arr = np.asarray(sites, dtype=np.int64)
        if arr.shape[-1] != self.d:
            raise ValueError(f"sites must have last dimension {self.d}")
        if np.any(np.abs(arr) > self.box_radius):
            raise ValueError("site outside the addressing box")
        return (arr + self.box_radius) @ self._strides()

    # -- raw word stream ---------------------------------------------------

    def _raw_words(self, first: int, count: int) -> np.ndarray:
        """Words [first, first+count) of this replica's flat Philox stream.

        Philox emits four words per counter block, so the stream is entered
        at block first//4 and trimmed to the requested window.
        """
        key = [self.master_seed & _U64, self.replica_index & _U64]
        block, offset = divmod(first, 4)
        gen = Philox(key=key, counter=[block, 0, 0, 0])
        nblocks = (offset + count + 3) // 4
        return gen.random_raw(4 * nblocks)[offset : offset + count]

    @staticmethod
    def _words_to_gaussians(words: np.ndarray, dt: float) -> np.ndarray:
        u = (words >> np.uint64(11)) * _INV53 + _HALF_ULP
        return ndtri(u) * sqrt(dt)

    # -- public queries ----------------------------------------------------

    def increment(self, site, step: int) -> float:
        """The increment ΔB_site over time step ``step`` (units sqrt(time))."""
        if step < 0:
            raise ValueError("step must be nonnegative")
        coords = np.asarray(as_site(site, self.d), dtype=np.int64)
        first = step * self.sites_per_step + int(self.flat_index(coords))
        word = self._raw_words(first, 1)
        return float(self._words_to_gaussians(word, self.dt)[0])

    def step_gaussians(self, step: int, radius: int | None = None) -> np.ndarray:
        """All increments of one step over the centered box of the given
        radius (default: the full addressing box).

        Returns an array of shape (2*radius+1,)*d.  Word indices of a
        sub-box span one contiguous stretch of the stream, so this costs a
        single generator pass over that stretch regardless of d.
        """
        if step < 0:
            raise ValueError("step must be nonnegative")
        r = self.box_radius if radius is None else int(radius)
        if r < 0 or r > self.box_radius:
            raise ValueError("radius must lie within the addressing box")
        strides = self._strides()
        stride_sum = int(strides.sum())
        lo = (self.box_radius - r) * stride_sum
        span = 2 * r * stride_sum + 1
        first = step * self.sites_per_step + lo
        raw = self._raw_words(first, span)
        if self.d == 1:
            return self._words_to_gaussians(raw, self.dt)
        shape = (2 * r + 1,) * self.d
        view = as_strided(raw, shape=shape, strides=tuple(8 * int(s) for s in strides))
        return self._words_to_gaussians(np.ascontiguousarray(view), self.dt)

    def gaussians_at(self, step: int, sites: np.ndarray) -> np.ndarray:
        """Increments at an arbitrary batch of sites (shape (n, d)) for one
        step; generates only the contiguous stream stretch covering them."""
        if step < 0:
            raise ValueError("step must be nonnegative")
        flats = self.flat_index(np.asarray(sites, dtype=np.int64).reshape(-1, self.d))
        if flats.size == 0:
            return np.empty(0)
        lo = int(flats.min())
        first = step * self.sites_per_step + lo
        raw = self._raw_words(first, int(flats.max()) - lo + 1)
        return self._words_to_gaussians(raw[flats - lo], self.dt)
