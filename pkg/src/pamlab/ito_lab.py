"""Window-based overlap decomposition, its pathwise inequalities, and the
strong-disorder constants.

Over a window [t - t0, t] the endpoint overlap I_t splits into a
semigroup-propagated initial term, three overlap integrals, and a
mean-zero remainder.  All lattice sums here are exact (the two-walk
semigroup is separable, so each smoothing is a per-axis Bessel-kernel
correlation); only the time integrals are quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import quad
from scipy.ndimage import correlate1d

from .errors import (
    BadEpsilonError,
    ConfigError,
    NoStrongDisorderCertificateError,
)
from .field_solver import EndpointSnapshot, ModelParams
from .rw_kernel import axis_kernel, collision_kernel
from .stat_lab import TestVerdict

__all__ = [
    "WindowRecord",
    "ItoTerms",
    "ito_terms",
    "claim1_check",
    "claim2_bookkeeping",
    "DisorderConstants",
    "constants",
]


@dataclass(frozen=True)
class WindowRecord:
    """Endpoint snapshots covering [t - t0, t] on a uniform grid.

    The terminal snapshot must land exactly on t; t0 = 0 degenerates to a
    single snapshot (all window integrals empty).
    """

    t: float
    t0: float
    snapshots: tuple[EndpointSnapshot, ...]

    def __post_init__(self) -> None:
        if self.t0 < 0 or self.t0 > self.t:
            raise ConfigError(f"window length {self.t0!r} must lie in [0, t]")
        if not self.snapshots:
            raise ConfigError("window has no snapshots")
        times = np.array([s.t for s in self.snapshots])
        if np.any(np.diff(times) <= 0):
            raise ConfigError("window snapshots must be strictly increasing in time")
        if abs(times[-1] - self.t) > 1e-9 or abs(times[0] - (self.t - self.t0)) > 1e-9:
            raise ConfigError(
                f"snapshots span [{times[0]:.6g}, {times[-1]:.6g}], expected "
                f"[{self.t - self.t0:.6g}, {self.t:.6g}]"
            )
        if self.t0 > 0 and len(self.snapshots) < 2:
            raise ConfigError("a nonempty window needs at least two snapshots")

    @classmethod
    def from_snapshots(cls, snapshots: Sequence[EndpointSnapshot]) -> "WindowRecord":
        t = snapshots[-1].t
        return cls(t=t, t0=t - snapshots[0].t, snapshots=tuple(snapshots))

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])


def _pair_smooth(U: np.ndarray, tau: float, params: ModelParams) -> np.ndarray:
    """S(x) = sum_y U(y) K_tau(x - y) for the distance kernel K of two
    independent walks (one walk at rate 2*kappa).  Exact on the box: taps
    beyond twice the radius only meet zero mass."""
    if tau == 0.0:
        return U
    d = U.ndim
    radius = (U.shape[0] - 1) // 2
    k = axis_kernel(tau, 2.0 * params.kappa / d, 2 * radius)
    out = U
    for ax in range(d):
        out = correlate1d(out, k, axis=ax, mode="constant", cval=0.0)
    return out


@dataclass(frozen=True)
class ItoTerms:
    """One window's decomposition of the terminal overlap.

    I_t = termA + termB + termC + termD + implied_N, where implied_N is
    the remainder attributed to the stochastic integral; it is obtained
    by subtraction, so only its cross-replica mean (zero) is testable.
    """

    t: float
    t0: float
    termA: float
    termB: float
    termC: float
    termD: float
    I_t: float
    stride: int
    n_nodes: int

    @property
    def implied_N(self) -> float:
        return self.I_t - self.termA - self.termB - self.termC - self.termD

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "t0": self.t0,
            "termA": self.termA,
            "termB": self.termB,
            "termC": self.termC,
            "termD": self.termD,
            "implied_N": self.implied_N,
            "I_t": self.I_t,
            "stride": self.stride,
            "n_nodes": self.n_nodes,
        }


def _subsample(n: int, stride: int) -> list[int]:
    # keep both endpoints; the last cell may be shorter than stride
    idx = list(range(0, n - 1, stride))
    idx.append(n - 1)
    return idx


def ito_terms(win: WindowRecord, params: ModelParams, stride: int = 1) -> ItoTerms:
    """Evaluate the four explicit window terms by trapezoid quadrature on
    every stride-th snapshot (endpoints always kept).

        termA = sum_{x,y} U_{t-t0}(x) U_{t-t0}(y) K_{t0}(x-y)
        termB = beta^2 * int r(t-s) I_s ds
        termC = -4 beta^2 * int sum_x U_s(x)^2 (K_{t-s} U_s)(x) ds
        termD = 3 beta^2 * int (sum_x U_s(x) (K_{t-s} U_s)(x)) I_s ds
    """
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride!r}")
    for s in win.snapshots:
        if s.U is None:
            raise ConfigError("window snapshots are missing their endpoint maps")
    beta2 = params.beta**2
    snaps = win.snapshots
    last = snaps[-1]

    first = snaps[0]
    SA = _pair_smooth(first.U, win.t0, params)
    termA = float((first.U * SA).sum())

    if win.t0 == 0.0:
        return ItoTerms(
            t=win.t, t0=0.0, termA=termA, termB=0.0, termC=0.0, termD=0.0,
            I_t=last.I, stride=stride, n_nodes=1,
        )

    idx = _subsample(len(snaps), stride)
    times = np.array([snaps[i].t for i in idx])
    gB = np.empty(len(idx))
    gC = np.empty(len(idx))
    gD = np.empty(len(idx))
    for j, i in enumerate(idx):
        s = snaps[i]
        tau = win.t - s.t
        S = _pair_smooth(s.U, tau, params)
        quad_form = float((s.U * S).sum())
        gB[j] = collision_kernel(tau, params.d, params.kappa) * s.I
        gC[j] = float((s.U * s.U * S).sum())
        gD[j] = quad_form * s.I

    termB = beta2 * float(np.trapezoid(gB, x=times))
    termC = -4.0 * beta2 * float(np.trapezoid(gC, x=times))
    termD = 3.0 * beta2 * float(np.trapezoid(gD, x=times))
    return ItoTerms(
        t=win.t, t0=win.t0, termA=termA, termB=termB, termC=termC, termD=termD,
        I_t=last.I, stride=stride, n_nodes=len(idx),
    )


def claim1_check(win: WindowRecord, params: ModelParams) -> TestVerdict:
    """Pathwise bounds on the smoothed-overlap integrand, asserted at
    every snapshot:

        (K_{t-s} U_s)(x)              <= r(t-s)                  for all x,
        sum_x U_s(x)^2 (K_{t-s}U_s)(x) <= I_s * min(sqrt(I_s r), r).

    Both follow from 0 <= K_tau(x-y) <= K_tau(0) = r(tau) and
    Cauchy-Schwarz; the verdict reports the worst excess over all sites
    and times against a 1e-12 roundoff tolerance.
    """
    for s in win.snapshots:
        if s.U is None:
            raise ConfigError("window snapshots are missing their endpoint maps")
    worst = -math.inf
    worst_at = (win.snapshots[0].t, "inner")
    for s in win.snapshots:
        tau = win.t - s.t
        r = collision_kernel(tau, params.d, params.kappa)
        S = _pair_smooth(s.U, tau, params)
        inner_excess = float(S.max()) - r
        if inner_excess > worst:
            worst, worst_at = inner_excess, (s.t, "inner")
        lhs = float((s.U * s.U * S).sum())
        bound = s.I * min(math.sqrt(s.I * r), r)
        if lhs - bound > worst:
            worst, worst_at = lhs - bound, (s.t, "outer")
    passed = worst <= 1e-12
    return TestVerdict(
        name="claim1",
        statistic=worst,
        tolerance=1e-12,
        passed=passed,
        status="pass" if passed else "fail",
        details=(
            f"worst excess {worst:.3e} ({worst_at[1]} bound at s={worst_at[0]:.6g}) "
            f"over {len(win.snapshots)} snapshots"
        ),
        data={"worst_s": worst_at[0], "which": worst_at[1]},
    )


def _window_double_integral(x: np.ndarray, h: float, W: int, r_taps: np.ndarray) -> float:
    """int_{t0}^{T} dt [trapezoid over s in [t-t0, t] of r(t-s) x_s],
    outer trapezoid on the same grid; t0 = W*h."""
    w = r_taps * h
    w[0] *= 0.5
    w[-1] *= 0.5
    inner = np.convolve(x, w)[W : len(x)]  # inner[i - W] = window integral at t_i
    outer_w = np.full(len(inner), h)
    outer_w[0] *= 0.5
    outer_w[-1] *= 0.5
    return float(inner @ outer_w)


def claim2_bookkeeping(
    t: np.ndarray, I: np.ndarray, consts: "DisorderConstants"
) -> TestVerdict:
    """Deterministic Fubini bounds for one recorded trajectory, with the
    thresholded overlap J_s = I_s 1{I_s >= c0}:

        int_{t0}^T dt int_{t-t0}^t r(t-s) J_s ds <= R(t0) int_0^T J_s ds
        int_{t0}^T dt int_{t-t0}^t r(t-s) I_s ds >= R(t0) int_{t0}^{T-t0} I_s ds

    The window length is snapped to the checkpoint grid and R(t0) is the
    trapezoid of r on that grid, which makes both bounds exact discrete
    identities up to edge weights of the right sign; the tolerance only
    absorbs roundoff.
    """
    t = np.asarray(t, dtype=float)
    I = np.asarray(I, dtype=float)
    if t.ndim != 1 or t.shape != I.shape or len(t) < 3:
        raise ConfigError("need aligned 1-d time and overlap series with >= 3 points")
    steps = np.diff(t)
    h = float(steps[0])
    if h <= 0 or np.any(np.abs(steps - h) > 1e-9):
        raise ConfigError("claim2 bookkeeping needs a uniform checkpoint grid")
    T = float(t[-1])
    if T < 2.0 * consts.t0:
        raise ConfigError(
            f"horizon T={T:.6g} is shorter than twice the window t0={consts.t0:.6g}"
        )
    W = int(round(consts.t0 / h))
    if W < 2:
        raise ConfigError("window shorter than two checkpoint steps; lower the stride")
    n = len(t)
    if W >= n:
        raise ConfigError("window exceeds the recorded horizon")

    r_taps = collision_kernel(np.arange(W + 1) * h, d=consts.d, kappa=consts.kappa)
    R_h = float(np.trapezoid(r_taps, dx=h))

    J = np.where(I >= consts.c0, I, 0.0)
    lhs1 = _window_double_integral(J, h, W, r_taps)
    rhs1 = R_h * float(np.trapezoid(J, dx=h))
    defect1 = lhs1 - rhs1

    lhs2 = _window_double_integral(I, h, W, r_taps)
    rhs2 = R_h * float(np.trapezoid(I[W : n - W], dx=h))
    defect2 = rhs2 - lhs2

    scale = max(1.0, float(np.max(I)) * R_h * T)
    tol = 1e-9 * scale
    worst = max(defect1, defect2)
    passed = worst <= tol
    return TestVerdict(
        name="claim2",
        statistic=worst,
        tolerance=tol,
        passed=passed,
        status="pass" if passed else "fail",
        details=(
            f"upper-bound defect {defect1:.3e}, lower-bound defect {defect2:.3e} "
            f"(grid t0={W * h:.6g}, R_h={R_h:.6g})"
        ),
        data={"defect1": defect1, "defect2": defect2, "R_h": R_h, "t0_grid": W * h},
    )


@dataclass(frozen=True)
class DisorderConstants:
    """Certificate (eps0, t0, c0, c1) that the disorder is strong enough
    for the localization argument at the given (d, kappa, beta):

        beta^2 R(t0) (1 - 4 sqrt(eps0)) > 1,
        c0 = eps0 * min_{0 <= t <= t0} r(t),
        c1 = (beta^2 (1-4 sqrt(eps0)) R(t0) - 1) / (4 beta^2 R(t0)).

    R_inf is +inf below three dimensions.
    """

    d: int
    kappa: float
    beta: float
    eps0: float
    t0: float
    c0: float
    c1: float
    R_t0: float
    R_inf: float

    def __post_init__(self) -> None:
        if not 0.0 < self.eps0 < 1.0 / 16.0:
            raise BadEpsilonError(f"eps0 must lie in (0, 1/16), got {self.eps0!r}")
        slack = 1.0 - 4.0 * math.sqrt(self.eps0)
        if not self.beta**2 * self.R_t0 * slack > 1.0:
            raise ValueError(
                f"certificate broken: beta^2 R(t0) (1-4 sqrt(eps0)) = "
                f"{self.beta**2 * self.R_t0 * slack:.6g} <= 1"
            )
        if not 0.0 < self.c0 < 1.0:
            raise ValueError(f"c0 = {self.c0!r} out of (0, 1)")
        expected_c1 = (self.beta**2 * slack * self.R_t0 - 1.0) / (
            4.0 * self.beta**2 * self.R_t0
        )
        if not 0.0 < self.c1 < 1.0 or abs(self.c1 - expected_c1) > 1e-12:
            raise ValueError(f"c1 = {self.c1!r} violates the closed formula")

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "kappa": self.kappa,
            "beta": self.beta,
            "eps0": self.eps0,
            "t0": self.t0,
            "c0": self.c0,
            "c1": self.c1,
            "R_t0": self.R_t0,
            "R_inf": None if math.isinf(self.R_inf) else self.R_inf,
        }


_GRID_START = 1e-3
_GRID_RATIO = 1.05
_GRID_CAP = 1e8


def constants(
    beta: float, d: int, kappa: float = 1.0, eps0: float = 1.0 / 32.0
) -> DisorderConstants:
    """Find the minimal t0 on a geometric grid certifying strong disorder,
    then derive (c0, c1).

    Raises a no-certificate error when beta^2 R(inf) <= 1 (possible only
    for d >= 3), or when the eps0 slack eats the margin, in which case a
    smaller eps0 may still succeed.
    """
    if beta <= 0.0:
        raise ConfigError(f"beta must be positive, got {beta!r}")
    if not 0.0 < eps0 < 1.0 / 16.0:
        raise BadEpsilonError(f"eps0 must lie in (0, 1/16), got {eps0!r}")
    from .rw_kernel import collision_green_inf

    slack = 1.0 - 4.0 * math.sqrt(eps0)
    R_inf = collision_green_inf(d, kappa)
    if math.isfinite(R_inf):
        if beta**2 * R_inf <= 1.0:
            raise NoStrongDisorderCertificateError(
                f"beta^2 R(inf) = {beta**2 * R_inf:.6g} <= 1 at d={d}, "
                f"kappa={kappa}, beta={beta}: no strong-disorder certificate exists"
            )
        if beta**2 * R_inf * slack <= 1.0:
            raise NoStrongDisorderCertificateError(
                f"beta^2 R(inf) (1-4 sqrt(eps0)) = {beta**2 * R_inf * slack:.6g} <= 1: "
                f"the eps0={eps0!r} slack eats the margin; try a smaller eps0"
            )

    def r(u: float) -> float:
        return collision_kernel(u, d=d, kappa=kappa)

    t_prev = 0.0
    t_cur = _GRID_START
    R_acc = 0.0
    while t_cur <= _GRID_CAP:
        R_acc += quad(r, t_prev, t_cur, epsabs=1e-12, epsrel=1e-10, limit=200)[0]
        if beta**2 * R_acc * slack > 1.0:
            break
        t_prev, t_cur = t_cur, t_cur * _GRID_RATIO
    else:
        raise NoStrongDisorderCertificateError(
            f"no t0 <= {_GRID_CAP:g} certifies strong disorder at d={d}, "
            f"kappa={kappa}, beta={beta}, eps0={eps0}"
        )

    t0 = t_cur
    grid = np.linspace(0.0, t0, 4097)
    c0 = eps0 * float(np.min(collision_kernel(grid, d=d, kappa=kappa)))
    c1 = (beta**2 * slack * R_acc - 1.0) / (4.0 * beta**2 * R_acc)
    return DisorderConstants(
        d=d, kappa=kappa, beta=beta, eps0=eps0, t0=t0, c0=c0, c1=c1,
        R_t0=R_acc, R_inf=R_inf,
    )
