"""Shared fixtures and independent oracles.

The kernel oracle exponentiates the truncated generator with sparse
linear algebra and never touches the package's Bessel-product code, so
kernel tests compare two genuinely different computations.  Acceptance
tests report through the ``criterion`` fixture, which prints one
PASS/FAIL line per criterion in the terminal summary.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sparse
from scipy.sparse.linalg import expm_multiply
from scipy.special import ive
from scipy.stats import poisson

# ---------------------------------------------------------------- oracles


def oracle_radius(kappa: float, t: float) -> int:
    """Box radius with jump-count escape probability below ~1e-14."""
    lam = max(kappa * t, 1e-9)
    return int(poisson.isf(1e-14, lam)) + 3


_EXPM_CACHE: dict[tuple, np.ndarray] = {}


def expm_kernel(t: float, d: int, kappa: float, radius: int | None = None) -> np.ndarray:
    """Walk kernel by exponentiating the truncated generator.

    Builds kappa*(P - I) with P the nearest-neighbor averaging matrix on a
    centered box (Dirichlet truncation; the lost mass is below 1e-13 at the
    chosen radius) and applies expm_multiply to the delta at the origin.
    Returns the (2r+1,)*d array.
    """
    r = oracle_radius(kappa, t) if radius is None else radius
    key = (round(t, 12), d, round(kappa, 12), r)
    if key in _EXPM_CACHE:
        return _EXPM_CACHE[key]
    n = 2 * r + 1
    eye = sparse.identity(n, format="csr")
    shift = sparse.diags([np.ones(n - 1), np.ones(n - 1)], [1, -1], format="csr")
    neighbor = sparse.csr_matrix((n**d, n**d))
    for axis in range(d):
        op = sparse.identity(1, format="csr")
        for j in range(d):
            op = sparse.kron(op, shift if j == axis else eye, format="csr")
        neighbor = neighbor + op
    gen = (kappa / (2.0 * d)) * neighbor - kappa * sparse.identity(n**d, format="csr")
    delta = np.zeros(n**d)
    delta[(n**d) // 2] = 1.0
    out = expm_multiply(gen * t, delta).reshape((n,) * d)
    _EXPM_CACHE[key] = out
    return out


def two_point_sum(t: float, x1, x2, d: int, kappa: float) -> float:
    """Explicit meeting probability sum_z p_t(z-x1) p_t(z-x2).

    Factorizes over axes; each axis vector is spelled out directly from
    the integer-order Bessel formula rather than taken from the package.
    """
    r = oracle_radius(kappa, t) + max(int(np.abs(np.asarray(x1) - np.asarray(x2)).max()), 0)
    ks = np.arange(-r, r + 1)
    a = ive(np.abs(ks), kappa * t / d)
    val = 1.0
    for i in range(d):
        lag = int(x1[i] - x2[i])
        if lag >= 0:
            val *= float(np.dot(a[lag:], a[: a.size - lag]))
        else:
            val *= float(np.dot(a[:lag], a[-lag:]))
    return val


def watson_green_inf() -> float:
    """Expected total collision time of two rate-1 walks on the cubic
    lattice, via the closed Gamma-function form of the simple-walk
    expected visit count: E[L] = u3 / 2."""
    g = math.gamma
    u3 = (math.sqrt(6.0) / (32.0 * math.pi**3)) * (
        g(1.0 / 24.0) * g(5.0 / 24.0) * g(7.0 / 24.0) * g(11.0 / 24.0)
    )
    return u3 / 2.0


# ------------------------------------------------- shared small ensemble


@pytest.fixture(scope="session")
def small_ensemble():
    """120 replicas of a short d=1 run with noise-increment recording;
    shared by the statistics unit tests."""
    from pamlab import ModelParams, ReplicaEnsemble, run_ensemble

    params = ModelParams(
        d=1, kappa=1.0, beta=0.5, dt=0.01, T=2.0, replicas=120, checkpoint_stride=10
    )
    series, failures = run_ensemble(params, record_qv=True)
    return ReplicaEnsemble(params=params, series=series, failures=failures)


@pytest.fixture(scope="session")
def noiseless_ensemble():
    """100 deterministic (beta = 0) replicas for degenerate-gate tests."""
    from pamlab import ModelParams, ReplicaEnsemble, run_ensemble

    params = ModelParams(
        d=1, kappa=1.0, beta=0.0, dt=0.01, T=1.0, replicas=100, checkpoint_stride=10
    )
    series, failures = run_ensemble(params, record_qv=True)
    return ReplicaEnsemble(params=params, series=series, failures=failures)


# ------------------------------------------------- acceptance reporting

_CRITERION_LINES: list[tuple[int, str]] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def _record(num: int, name: str, ok: bool, detail: str = ""):
        tail = f" ({detail})" if detail else ""
        _CRITERION_LINES.append(
            (num, f"criterion {num:02d} {name}: {'PASS' if ok else 'FAIL'}{tail}")
        )
        assert ok, f"criterion {num:02d} {name} failed: {detail}"

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERION_LINES):
            terminalreporter.write_line(line)
