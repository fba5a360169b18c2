"""Operator-splitting solver for the point-to-point partition field.

The field Z_t(0, x) starts as a point mass at the origin and evolves under
the lattice stochastic heat equation

    dZ_t(x) = kappa * Delta Z_t(x) dt + beta * Z_t(x) dB_x(t)

discretized per step as
  (i)  noise substep:      Z(x) <- Z(x) * exp(beta*dB_x - beta^2*dt/2),
  (ii) diffusion substep:  Z <- Z + dt*kappa*Delta Z   (absorbing outside
       the box; absorbed mass is accumulated, never silently dropped).

The noise factor has conditional mean exactly one and the diffusion substep
conserves mass up to absorption, so the discrete total Z_t is an exact
martingale modulo escaped mass; the statistical tests downstream rely on
this being exact rather than approximate.

An exact-kernel diffusion mode replaces (ii) with per-axis convolution
against the true one-step transition kernel, which removes the first-order
splitting bias of the walk marginals (used where the comparison target is
the continuous-time walk itself).

The field is kept in linear scale with an automatic whole-field rescaling
(tracked in log_scale) whenever the total leaves [1e-100, 1e100]; the band
is tighter than overflow demands because overlap sums square the values.
U, I, V are scale invariant, so observables are unaffected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from . import rw_kernel
from .environment import EnvironmentGrid
from .errors import (
    BoxTooSmallError,
    ConfigError,
    NumericalCollapseError,
    NumericalError,
)

__all__ = [
    "ModelParams",
    "FieldState",
    "EndpointSnapshot",
    "ReplicaSeries",
    "step",
    "endpoint",
    "run_replica",
    "run_ensemble",
]

_RESCALE_LO = 1e-100
_RESCALE_HI = 1e100
_ESCAPE_BUDGET = 1e-6


@dataclass(frozen=True)
class ModelParams:
    """Validated parameter set for one simulation run."""

    d: int = 1
    kappa: float = 1.0
    beta: float = 0.5
    dt: float = 0.01
    T: float = 5.0
    box_radius: int | None = None
    master_seed: int = 20260814
    replicas: int = 200
    checkpoint_stride: int = 10

    def __post_init__(self) -> None:
        if not isinstance(self.d, int) or self.d < 1:
            raise ConfigError(f"d: dimension must be a positive integer, got {self.d!r}")
        if self.kappa < 0:
            raise ConfigError(f"kappa: jump rate must be nonnegative, got {self.kappa!r}")
        if self.beta < 0:
            raise ConfigError(f"beta: inverse temperature must be nonnegative, got {self.beta!r}")
        if self.dt <= 0:
            raise ConfigError(f"dt: time step must be positive, got {self.dt!r}")
        if self.T < self.dt:
            raise ConfigError(f"T: horizon must be at least one step, got {self.T!r}")
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ConfigError(
                f"T: horizon {self.T!r} is not an integer multiple of dt={self.dt!r}"
            )
        if self.dt * self.kappa > 0.5 + 1e-12:
            raise ConfigError(
                f"dt*kappa = {self.dt * self.kappa:.4g} violates the stability bound 0.5"
            )
        needed = rw_kernel.containment_radius(self.kappa, self.T)
        if self.box_radius is None:
            object.__setattr__(self, "box_radius", needed)
        elif self.box_radius < needed:
            raise ConfigError(
                f"box_radius: {self.box_radius} is below the containment radius "
                f"{needed} for kappa={self.kappa}, T={self.T}"
            )
        if self.replicas < 1:
            raise ConfigError("replicas: need at least one replica")
        if not isinstance(self.checkpoint_stride, int) or self.checkpoint_stride < 1:
            raise ConfigError("checkpoint_stride: must be a positive integer")

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)


@dataclass
class FieldState:
    """Partition field on the truncated box at one instant.

    ``values`` holds Z_t(0, x) up to the common factor exp(log_scale);
    ``total`` is its sum and ``escaped_mass`` the absorbed boundary mass,
    both in the same scale as ``values``.  ``active_radius`` bounds the
    support (it grows by the diffusion stencil width each step), letting
    substeps touch only the occupied part of the box.
    """

    t: float
    step_index: int
    values: np.ndarray
    total: float
    escaped_mass: float
    log_scale: float
    active_radius: int

    @classmethod
    def initial(cls, params: ModelParams) -> "FieldState":
        side = 2 * params.box_radius + 1
        values = np.zeros((side,) * params.d)
        values[(params.box_radius,) * params.d] = 1.0
        return cls(
            t=0.0,
            step_index=0,
            values=values,
            total=1.0,
            escaped_mass=0.0,
            log_scale=0.0,
            active_radius=0,
        )

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def radius(self) -> int:
        return (self.values.shape[0] - 1) // 2

    @property
    def log_total(self) -> float:
        return self.log_scale + math.log(self.total)


@dataclass(frozen=True)
class EndpointSnapshot:
    """Endpoint law U_t, overlap I_t = sum U^2, and peak mass V_t = max U."""

    t: float
    U: np.ndarray
    I: float
    V: float

    def __post_init__(self) -> None:
        s = float(self.U.sum())
        if abs(s - 1.0) > 1e-12:
            raise NumericalError(f"endpoint law sums to {s!r}, not 1")
        if not (self.V * self.V <= self.I + 1e-12 and self.I <= self.V + 1e-12):
            raise NumericalError(f"endpoint sandwich violated: V={self.V!r}, I={self.I!r}")


def _box_slices(radius: int, active: int, d: int) -> tuple[slice, ...]:
    lo = radius - active
    return (slice(lo, lo + 2 * active + 1),) * d


def _first_order_diffusion(sub: np.ndarray, d: int, dt_kappa: float) -> np.ndarray:
    """One explicit-Euler diffusion step on an active block.

    Input has shape (2a+1,)^d; output has shape (2a+3,)^d (support grows by
    one site per axis).  No clipping happens here; the caller trims to the
    box and books the trimmed mass as escaped.
    """
    a = (sub.shape[0] - 1) // 2
    b = a + 1
    out = np.zeros((2 * b + 1,) * d)
    core = tuple(slice(1, 2 * a + 2) for _ in range(d))
    out[core] = (1.0 - dt_kappa) * sub
    w = dt_kappa / (2 * d)
    for axis in range(d):
        for shift in (1, -1):
            dst = list(core)
            dst[axis] = slice(1 + shift, 2 * a + 2 + shift)
            out[tuple(dst)] += w * sub
    return out


@dataclass(frozen=True)
class _ExactKernel:
    """One-step exact diffusion kernel, shared per (dt, kappa, d)."""

    taps: np.ndarray
    halfwidth: int
    mass_deficit: float  # per-step truncated tail over all axes

    @classmethod
    def build(cls, dt: float, kappa: float, d: int) -> "_ExactKernel":
        m = 2
        while True:
            taps = rw_kernel.axis_kernel(dt, kappa / d, m)
            tail = 1.0 - taps.sum()
            if tail < 1e-15 or m > 64:
                break
            m += 1
        mass = float(taps.sum())
        return cls(taps=taps, halfwidth=m, mass_deficit=1.0 - mass**d)


def _exact_diffusion(
    sub: np.ndarray, d: int, kern: _ExactKernel
) -> tuple[np.ndarray, float]:
    """Separable convolution with the exact one-step kernel; support grows
    by the kernel halfwidth per axis."""
    a = (sub.shape[0] - 1) // 2
    m = kern.halfwidth
    b = a + m
    out = np.zeros((2 * b + 1,) * d)
    out[tuple(slice(m, m + 2 * a + 1) for _ in range(d))] = sub
    for axis in range(d):
        out = convolve1d(out, kern.taps, axis=axis, mode="constant", cval=0.0)
    return out, kern.mass_deficit * float(sub.sum())


def step(
    state: FieldState,
    env: EnvironmentGrid,
    params: ModelParams,
    *,
    drop_compensator: bool = False,
    exact_diffusion: bool = False,
    stats: dict | None = None,
) -> FieldState:
    """Advance the field by one time step (noise substep, then diffusion).

    ``drop_compensator`` removes the -beta^2*dt/2 term from the noise factor
    (a deliberately biased scheme used as a self-check control).
    ``stats``, when given, receives the totals before and after the noise
    substep plus the pre-step overlap, in the current scale.
    """
    dt = params.dt
    k = state.step_index
    R = state.radius
    a = state.active_radius
    sl = _box_slices(R, a, state.d)
    sub = state.values[sl]

    total_before = state.total
    if stats is not None:
        stats["z_before"] = total_before
        stats["overlap_before"] = float((sub * sub).sum()) / (total_before * total_before)

    # noise substep
    if params.beta > 0.0:
        g = env.step_gaussians(k, radius=a)
        comp = 0.0 if drop_compensator else 0.5 * params.beta**2 * dt
        sub = sub * np.exp(params.beta * g - comp)
    total_noise = float(sub.sum())
    if stats is not None:
        stats["z_after_noise"] = total_noise

    # diffusion substep with absorbing boundary
    escaped = state.escaped_mass
    if params.kappa > 0.0:
        if exact_diffusion:
            kern = _exact_kernel_cache(dt, params.kappa, state.d)
            grown, deficit = _exact_diffusion(sub, state.d, kern)
            escaped += deficit
        else:
            grown = _first_order_diffusion(sub, state.d, dt * params.kappa)
        b = (grown.shape[0] - 1) // 2
        if b > R:
            trim = tuple(slice(b - R, b + R + 1) for _ in range(state.d))
            inside = grown[trim].copy()
            # max() guards against summation roundoff driving this negative
            escaped += max(float(grown.sum() - inside.sum()), 0.0)
            grown, b = inside, R
    else:
        grown, b = sub, a

    values = np.zeros_like(state.values)
    values[_box_slices(R, b, state.d)] = grown
    total = float(grown.sum())

    if not math.isfinite(total) or total <= 0.0:
        raise NumericalCollapseError(
            f"field total became {total!r} at t={state.t + dt:.6g}; the run needs "
            "either a larger dt*beta budget or a log-domain treatment"
        )
    if escaped > _ESCAPE_BUDGET * total:
        raise BoxTooSmallError(
            f"escaped mass fraction {escaped / total:.3e} exceeded {_ESCAPE_BUDGET} "
            f"at t={state.t + dt:.6g}; enlarge box_radius"
        )

    log_scale = state.log_scale
    if not (_RESCALE_LO < total < _RESCALE_HI):
        log_scale += math.log(total)
        values /= total
        escaped /= total
        total = 1.0

    return FieldState(
        t=(k + 1) * dt,
        step_index=k + 1,
        values=values,
        total=total,
        escaped_mass=escaped,
        log_scale=log_scale,
        active_radius=b,
    )


_KERNEL_CACHE: dict[tuple[float, float, int], _ExactKernel] = {}


def _exact_kernel_cache(dt: float, kappa: float, d: int) -> _ExactKernel:
    key = (dt, kappa, d)
    if key not in _KERNEL_CACHE:
        _KERNEL_CACHE[key] = _ExactKernel.build(dt, kappa, d)
    return _KERNEL_CACHE[key]


def endpoint(state: FieldState) -> EndpointSnapshot:
    """Endpoint law of the polymer measure at the state's time."""
    if state.total <= 0.0:
        raise NumericalCollapseError("cannot normalize a massless field")
    U = state.values / state.total
    I = float((U * U).sum())
    V = float(U.max())
    return EndpointSnapshot(t=state.t, U=U, I=I, V=V)


@dataclass
class ReplicaSeries:
    """Checkpointed observables of one replica.

    ``escaped`` is the escaped-mass fraction (escaped/total, dimensionless);
    multiply by Z for absolute units.  ``qv_sq``/``qv_reg`` hold, per step,
    the squared noise-substep increment of Z and its predicted conditional
    variance beta^2*Z^2*I*dt, both recorded in the scale where the pre-step
    total is one (the law is scale invariant; fixing the scale per step
    keeps the pooled regression from being dominated by high-Z replicas).
    ``window`` holds full endpoint snapshots on the requested final stretch.
    """

    replica_index: int
    t: np.ndarray
    Z: np.ndarray
    logZ: np.ndarray
    I: np.ndarray
    V: np.ndarray
    intI: np.ndarray
    escaped: np.ndarray
    qv_sq: np.ndarray | None = None
    qv_reg: np.ndarray | None = None
    window: list[EndpointSnapshot] | None = None


def run_replica(
    params: ModelParams,
    replica_index: int,
    *,
    record_qv: bool = False,
    window_start: float | None = None,
    window_stride: int = 1,
    drop_compensator: bool = False,
    exact_diffusion: bool = False,
) -> ReplicaSeries:
    """Run one replica to the horizon, recording checkpoints.

    Deterministic given (params.master_seed, replica_index).  The running
    integral of the overlap is accumulated by per-step trapezoid, not just
    at checkpoints.
    """
    env = EnvironmentGrid(
        master_seed=params.master_seed,
        replica_index=replica_index,
        dt=params.dt,
        d=params.d,
        box_radius=params.box_radius,
    )
    state = FieldState.initial(params)
    n = params.n_steps
    stride = params.checkpoint_stride

    ws_step = None
    if window_start is not None:
        ws_step = round(window_start / params.dt)
        if ws_step < 0 or ws_step > n:
            raise ConfigError(f"window start {window_start!r} outside [0, T]")

    rows: list[tuple[float, float, float, float, float, float, float]] = []
    qsq: list[float] = []
    qreg: list[float] = []
    snaps: list[EndpointSnapshot] = []

    def overlap(s: FieldState) -> float:
        sub = s.values[_box_slices(s.radius, s.active_radius, s.d)]
        return float((sub * sub).sum()) / (s.total * s.total)

    def vmax(s: FieldState) -> float:
        sub = s.values[_box_slices(s.radius, s.active_radius, s.d)]
        return float(sub.max()) / s.total

    def record(s: FieldState, intI: float, I_val: float) -> None:
        logz = s.log_total
        rows.append(
            (s.t, math.exp(logz), logz, I_val, vmax(s), intI, s.escaped_mass / s.total)
        )

    def want_snapshot(k: int) -> bool:
        if ws_step is None:
            return False
        return k == n or (k >= ws_step and (k - ws_step) % window_stride == 0)

    intI = 0.0
    I_prev = overlap(state)
    record(state, intI, I_prev)
    if want_snapshot(0):
        snaps.append(endpoint(state))

    stats: dict | None = {} if record_qv else None
    for k in range(n):
        try:
            state = step(
                state,
                env,
                params,
                drop_compensator=drop_compensator,
                exact_diffusion=exact_diffusion,
                stats=stats,
            )
        except NumericalError as exc:
            raise type(exc)(f"replica {replica_index}: {exc}") from exc
        I_new = overlap(state)
        intI += 0.5 * params.dt * (I_prev + I_new)
        I_prev = I_new
        if stats is not None:
            dz = stats["z_after_noise"] / stats["z_before"] - 1.0
            qsq.append(dz * dz)
            qreg.append(params.beta**2 * stats["overlap_before"] * params.dt)
        kk = state.step_index
        if kk % stride == 0 or kk == n:
            record(state, intI, I_new)
        if want_snapshot(kk):
            snaps.append(endpoint(state))

    cols = np.asarray(rows).T
    return ReplicaSeries(
        replica_index=replica_index,
        t=cols[0],
        Z=cols[1],
        logZ=cols[2],
        I=cols[3],
        V=cols[4],
        intI=cols[5],
        escaped=cols[6],
        qv_sq=np.asarray(qsq) if record_qv else None,
        qv_reg=np.asarray(qreg) if record_qv else None,
        window=snaps if window_start is not None else None,
    )


def _replica_task(args: tuple[ModelParams, int, dict]) -> ReplicaSeries:
    params, idx, opts = args
    return run_replica(params, idx, **opts)


def run_ensemble(
    params: ModelParams,
    *,
    workers: int = 1,
    tolerate_collapse: bool = False,
    indices: Sequence[int] | None = None,
    **replica_opts: Any,
) -> tuple[list[ReplicaSeries], list[tuple[int, str]]]:
    """Run params.replicas independent replicas (or an explicit index set).

    Results come back in replica-index order regardless of scheduling, so
    downstream aggregation is bit-deterministic.  With tolerate_collapse,
    numerically collapsed replicas are dropped into the failure list instead
    of aborting the ensemble.
    """
    idxs = list(range(params.replicas)) if indices is None else list(indices)
    series: list[ReplicaSeries] = []
    failures: list[tuple[int, str]] = []

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        tasks = [(params, i, replica_opts) for i in idxs]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {i: pool.submit(_replica_task, t) for i, t in zip(idxs, tasks)}
            for i in idxs:
                try:
                    series.append(futures[i].result())
                except NumericalError as exc:
                    if not tolerate_collapse:
                        raise
                    failures.append((i, str(exc)))
    else:
        for i in idxs:
            try:
                series.append(run_replica(params, i, **replica_opts))
            except NumericalError as exc:
                if not tolerate_collapse:
                    raise
                failures.append((i, str(exc)))
    return series, failures
