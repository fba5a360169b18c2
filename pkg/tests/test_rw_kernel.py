"""Kernel-layer unit tests: closed forms against the sparse matrix
exponential oracle, identity cross-routes, and the cached table."""

import math

import numpy as np
import pytest

from conftest import expm_kernel, oracle_radius, two_point_sum, watson_green_inf
from pamlab import (
    KernelTable,
    axis_kernel,
    collision_green,
    collision_green_inf,
    collision_kernel,
    containment_radius,
    heat_kernel,
    kernel_grid,
    two_point_semigroup,
)


def test_heat_kernel_matches_generator_exponential():
    for d, kappa, t in [(1, 1.0, 0.7), (2, 0.5, 1.3), (1, 2.0, 0.25)]:
        r = oracle_radius(kappa, t)
        oracle = expm_kernel(t, d, kappa)
        mine = kernel_grid(t, d, kappa, r)
        assert np.max(np.abs(mine - oracle)) < 1e-11


def test_heat_kernel_point_mass_at_time_zero():
    assert heat_kernel(0.0, (0, 0), 2, 1.0) == 1.0
    assert heat_kernel(0.0, (1, 0), 2, 1.0) == 0.0


def test_heat_kernel_rejects_bad_arguments():
    with pytest.raises(ValueError):
        heat_kernel(-0.1, 0, 1, 1.0)
    with pytest.raises(ValueError):
        heat_kernel(1.0, 0, 1, -2.0)
    with pytest.raises(ValueError):
        heat_kernel(1.0, (1, 2, 3), 2, 1.0)  # site dimension mismatch


def test_kernel_grid_factorizes_and_normalizes():
    g = kernel_grid(0.9, 2, 1.0, 20)
    assert abs(g.sum() - 1.0) < 1e-12
    # separability: grid entry equals the per-site closed form
    assert g[20 + 3, 20 - 2] == pytest.approx(heat_kernel(0.9, (3, -2), 2, 1.0), abs=1e-15)
    ax = axis_kernel(0.9, 1.0 / 2.0, 20)
    assert np.allclose(g, np.outer(ax, ax), atol=1e-15)


def test_collision_kernel_equals_squared_kernel_sum():
    for d, t in [(1, 0.6), (2, 0.8), (3, 1.1)]:
        r = oracle_radius(1.0, t)
        g = kernel_grid(t, d, 1.0, r)
        assert collision_kernel(t, d, 1.0) == pytest.approx(float((g * g).sum()), abs=1e-12)


def test_collision_kernel_is_difference_walk_return():
    # two walks at rate kappa meet like one walk at rate 2*kappa returns
    for d, t, kappa in [(1, 0.5, 1.0), (3, 0.7, 0.5)]:
        r = oracle_radius(2.0 * kappa, t)
        q = kernel_grid(t, d, 2.0 * kappa, r)
        assert collision_kernel(2.0 * t, d, kappa) == pytest.approx(
            float((q * q).sum()), abs=1e-12
        )


def test_collision_kernel_vectorizes():
    ts = np.array([0.0, 0.3, 1.7])
    vec = collision_kernel(ts, 2, 1.0)
    assert vec.shape == ts.shape
    for i, t in enumerate(ts):
        assert vec[i] == collision_kernel(float(t), 2, 1.0)


def test_collision_green_monotone_from_zero():
    vals = [collision_green(t, 2, 1.0) for t in (0.0, 0.5, 1.0, 4.0)]
    assert vals[0] == 0.0
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_collision_green_inf_matches_watson_closed_form():
    assert collision_green_inf(3, 1.0) == pytest.approx(watson_green_inf(), abs=1e-6)
    # time change: doubling the jump rate halves the total collision time
    assert collision_green_inf(3, 2.0) == pytest.approx(collision_green_inf(3, 1.0) / 2.0, rel=1e-6)
    assert collision_green_inf(1) == math.inf
    assert collision_green_inf(2) == math.inf


def test_two_point_semigroup_matches_explicit_sum():
    rng = np.random.default_rng(7)
    for d in (1, 2, 3):
        for _ in range(5):
            t = float(rng.uniform(0.05, 3.0))
            x1 = rng.integers(-4, 5, size=d)
            x2 = rng.integers(-4, 5, size=d)
            val = two_point_semigroup(t, x1, x2, 1.0)
            assert val == pytest.approx(two_point_sum(t, x1, x2, d, 1.0), abs=1e-12)
    # symmetric in the two starting points, equals r(t) on the diagonal
    assert two_point_semigroup(0.8, (2, -1), (0, 3), 1.0) == two_point_semigroup(
        0.8, (0, 3), (2, -1), 1.0
    )
    assert two_point_semigroup(1.4, (5, 5), (5, 5), 1.0) == pytest.approx(
        collision_kernel(1.4, 2, 1.0), abs=1e-14
    )


def test_containment_radius_bounds_walk_mass():
    for kappa, T in [(1.0, 5.0), (2.0, 20.0)]:
        r = containment_radius(kappa, T)
        g = kernel_grid(T, 1, kappa, r)
        assert 1.0 - g.sum() < 1e-9


def test_kernel_table_lookup_and_order():
    table = KernelTable.build(d=2, rate=1.0, times=[0.5, 0.2], radius=15)
    assert table.times == (0.2, 0.5)
    assert table.prob(0.5, (1, -1)) == pytest.approx(heat_kernel(0.5, (1, -1), 2, 1.0))
    assert table.prob(0.5, (99, 0)) == 0.0  # outside the box
    with pytest.raises(KeyError):
        table.prob(0.3, (0, 0))  # uncached time
    rows = list(table.rows())
    assert len(rows) == 2 * 31**2
    assert rows[0][0] == 0.2 and rows[-1][0] == 0.5
    sites = [site for _, site, _ in rows[: 31**2]]
    assert sites == sorted(sites)  # deterministic row-major site order


def test_kernel_table_rejects_leaky_radius():
    with pytest.raises(ValueError, match="radius"):
        KernelTable.build(d=1, rate=1.0, times=[6.0], radius=4)
