"""Continuous-time walk paths, the Feynman-Kac estimator of Z, and
two-walk collision functionals.

A path is stored on its jump skeleton (exact event times, no time grid).
The Feynman-Kac weight, by contrast, reads the environment at step-frozen
positions, exactly the discretization the field solver uses, so that the
two estimators of Z_T compute the same functional of one shared
environment; their agreement is then limited only by Monte Carlo error,
not by a discretization mismatch.  Paths whose frozen position leaves the
box are killed (weight zero), mirroring the solver's absorbing boundary.

Collision times of two paths are measured exactly on the merged jump
skeleton: the exponential-law and second-moment tests are sensitive to
grid quantization, so no time grid is involved there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import EnvironmentGrid

__all__ = [
    "JumpPath",
    "sample_path",
    "path_seed",
    "FeynmanKacEstimate",
    "feynman_kac_Z",
    "collision_time",
    "sample_collision_times",
    "sample_paths",
]

# fixed tags keeping path randomness disjoint from other derived streams
_TAG_PATH = 0x70617468
_TAG_PAIR = 0x70616972


@dataclass(frozen=True)
class JumpPath:
    """Piecewise-constant trajectory: sites[k] is held on
    [jump_times[k], jump_times[k+1]), with jump_times[0] = 0."""

    T: float
    jump_times: np.ndarray
    sites: np.ndarray

    def __post_init__(self) -> None:
        jt, st = self.jump_times, self.sites
        if jt.ndim != 1 or st.ndim != 2 or jt.size != st.shape[0]:
            raise ValueError("jump_times and sites must be aligned 1-D/2-D arrays")
        if jt.size == 0 or jt[0] != 0.0:
            raise ValueError("paths must start at time 0")
        if np.any(np.diff(jt) <= 0.0):
            raise ValueError("jump times must be strictly increasing")
        if jt[-1] > self.T:
            raise ValueError("jump times must lie within [0, T]")
        if st.shape[0] > 1:
            steps = np.abs(np.diff(st, axis=0)).sum(axis=1)
            if np.any(steps != 1):
                raise ValueError("consecutive sites must differ by one unit step")

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    def positions(self, times: np.ndarray) -> np.ndarray:
        """Sites occupied at the given times (shape (m, d))."""
        ts = np.asarray(times, dtype=float)
        if np.any(ts < 0.0) or np.any(ts > self.T):
            raise ValueError("query times outside [0, T]")
        idx = np.searchsorted(self.jump_times, ts, side="right") - 1
        return self.sites[idx]

    def position(self, t: float) -> np.ndarray:
        return self.positions(np.asarray([t]))[0]


def path_seed(master_seed: int, tag: int, index: int) -> np.random.SeedSequence:
    """Deterministic per-path seed material, disjoint across (tag, index)."""
    return np.random.SeedSequence([master_seed & ((1 << 64) - 1), tag, index])


def sample_path(T: float, params, seed) -> JumpPath:
    """Sample one rate-``params.kappa`` walk path on [0, T].

    Exponential holding times, uniform neighbor choice; ``params`` only
    needs ``kappa`` and ``d`` attributes.  ``seed`` is anything accepted by
    numpy's default_rng (an integer or a SeedSequence).
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    kappa, d = params.kappa, params.d
    rng = np.random.default_rng(seed)
    if kappa == 0.0:
        return JumpPath(
            T=T,
            jump_times=np.zeros(1),
            sites=np.zeros((1, d), dtype=np.int64),
        )
    times: list[np.ndarray] = []
    cur = 0.0
    block = max(16, int(kappa * T + 4.0 * math.sqrt(kappa * T) + 8.0))
    while cur < T:
        gaps = rng.exponential(1.0 / kappa, block)
        cs = cur + np.cumsum(gaps)
        times.append(cs[cs < T])
        cur = float(cs[-1])
    jt = np.concatenate(times) if times else np.empty(0)
    n = jt.size
    dirs = rng.integers(0, 2 * d, size=n)
    steps = np.zeros((n, d), dtype=np.int64)
    if n:
        steps[np.arange(n), dirs // 2] = 1 - 2 * (dirs % 2)
    sites = np.zeros((n + 1, d), dtype=np.int64)
    np.cumsum(steps, axis=0, out=sites[1:])
    return JumpPath(T=T, jump_times=np.concatenate([[0.0], jt]), sites=sites)


@dataclass(frozen=True)
class FeynmanKacEstimate:
    """Importance-sampling estimate of Z_T over a fixed path set."""

    mean: float
    stderr: float
    n_paths: int
    high_variance: bool  # relative standard error above 50%: do not trust
    # agreement claims made from this estimate


def feynman_kac_Z(paths: list[JumpPath], env: EnvironmentGrid, params) -> FeynmanKacEstimate:
    """Average path weight exp(beta * sum_k dB_{pos(t_k)}(k) - beta^2*T/2).

    Positions are frozen at the left endpoint of each step; paths leaving
    the box are assigned weight zero from that step on.
    """
    if not paths:
        raise ValueError("need at least one path")
    n = params.n_steps
    dt, beta, R = params.dt, params.beta, env.box_radius
    grid = np.arange(n) * dt
    m = len(paths)

    logw = np.zeros(m)
    pos = np.empty((m, n, params.d), dtype=np.int64)
    for j, p in enumerate(paths):
        if p.T + 1e-12 < params.T:
            raise ValueError("path horizon shorter than the model horizon")
        pos[j] = p.positions(grid)
    inbox = (np.abs(pos) <= R).all(axis=2)
    # a path is dead from its first out-of-box step onward
    dead_from = np.where(inbox.all(axis=1), n, inbox.argmin(axis=1))

    if beta > 0.0:
        for k in range(n):
            live = dead_from > k
            if not live.any():
                break
            g = env.gaussians_at(k, pos[live, k, :])
            logw[live] += beta * g
    alive = dead_from == n
    w = np.where(alive, np.exp(logw - 0.5 * beta * beta * params.T), 0.0)
    mean = float(w.mean())
    stderr = float(w.std(ddof=1) / math.sqrt(m)) if m > 1 else math.inf
    rel = stderr / mean if mean > 0 else math.inf
    return FeynmanKacEstimate(mean=mean, stderr=stderr, n_paths=m, high_variance=rel > 0.5)


def collision_time(path1: JumpPath, path2: JumpPath, t: float) -> float:
    """Exact Lebesgue time the two trajectories coincide on [0, t].

    Interval arithmetic on the merged jump skeleton; no time grid.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    if t > path1.T + 1e-12 or t > path2.T + 1e-12:
        raise ValueError("both paths must be defined on [0, t]")
    if path1.d != path2.d:
        raise ValueError("paths live in different dimensions")
    if t == 0.0:
        return 0.0
    cuts = np.unique(
        np.concatenate(
            [
                path1.jump_times[path1.jump_times < t],
                path2.jump_times[path2.jump_times < t],
                [0.0, t],
            ]
        )
    )
    starts = cuts[:-1]
    durations = np.diff(cuts)
    p1 = path1.sites[np.searchsorted(path1.jump_times, starts, side="right") - 1]
    p2 = path2.sites[np.searchsorted(path2.jump_times, starts, side="right") - 1]
    same = (p1 == p2).all(axis=1)
    return float(durations[same].sum())


def sample_collision_times(params, T: float, n_pairs: int, *, tag: int = _TAG_PAIR) -> np.ndarray:
    """Collision times L_T of independent path pairs, both started at the
    origin; deterministic given params.master_seed."""
    if n_pairs < 1:
        raise ValueError("need at least one pair")
    out = np.empty(n_pairs)
    for i in range(n_pairs):
        p1 = sample_path(T, params, path_seed(params.master_seed, tag, 2 * i))
        p2 = sample_path(T, params, path_seed(params.master_seed, tag, 2 * i + 1))
        out[i] = collision_time(p1, p2, T)
    return out


def sample_paths(params, T: float, n_paths: int, *, tag: int = _TAG_PATH) -> list[JumpPath]:
    """Independent paths for the Feynman-Kac estimator, seeded off the
    master seed but on a stream disjoint from every environment."""
    return [
        sample_path(T, params, path_seed(params.master_seed, tag, i)) for i in range(n_paths)
    ]
