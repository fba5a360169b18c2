"""Path sampler unit tests: trajectory law, collision-time arithmetic
against quadrature, and the importance-sampling duality with the solver."""

import numpy as np
import pytest

from pamlab import (
    JumpPath,
    ModelParams,
    collision_green,
    collision_time,
    feynman_kac_Z,
    run_replica,
    sample_collision_times,
    sample_path,
    sample_paths,
)
from pamlab.environment import EnvironmentGrid
from pamlab.path_sampler import path_seed


def test_jump_path_validation_and_queries():
    p = JumpPath(
        T=2.0,
        jump_times=np.array([0.0, 0.5, 1.2]),
        sites=np.array([[0, 0], [1, 0], [1, -1]]),
    )
    assert np.array_equal(p.position(0.49), [0, 0])
    assert np.array_equal(p.position(0.5), [1, 0])
    assert np.array_equal(p.position(2.0), [1, -1])
    with pytest.raises(ValueError, match="unit step"):
        JumpPath(T=1.0, jump_times=np.array([0.0, 0.5]), sites=np.array([[0], [2]]))
    with pytest.raises(ValueError, match="increasing"):
        JumpPath(
            T=1.0,
            jump_times=np.array([0.0, 0.5, 0.5]),
            sites=np.array([[0], [1], [0]]),
        )


def test_sampled_paths_have_the_walk_law():
    params = ModelParams(d=2, kappa=1.5, dt=0.01, T=3.0, replicas=1)
    paths = sample_paths(params, T=3.0, n_paths=2000)
    counts = np.array([p.jump_times.size - 1 for p in paths])
    lam = params.kappa * 3.0
    # jump count is Poisson(kappa*T): mean and variance within 5 sigma
    assert abs(counts.mean() - lam) < 5.0 * np.sqrt(lam / counts.size)
    assert abs(counts.var() - lam) < 5.0 * lam * np.sqrt(2.0 / counts.size)
    steps = np.concatenate([np.diff(p.sites, axis=0) for p in paths])
    # each of the 2d directions is equally likely
    freq = np.array(
        [np.mean((steps[:, 0] == dx) & (steps[:, 1] == dy)) for dx, dy in
         [(1, 0), (-1, 0), (0, 1), (0, -1)]]
    )
    assert np.max(np.abs(freq - 0.25)) < 5.0 * np.sqrt(0.25 * 0.75 / steps.shape[0])
    # same seed material, same path
    a = sample_path(3.0, params, path_seed(params.master_seed, 1, 7))
    b = sample_path(3.0, params, path_seed(params.master_seed, 1, 7))
    assert np.array_equal(a.jump_times, b.jump_times)
    assert np.array_equal(a.sites, b.sites)


def test_collision_time_interval_arithmetic():
    one = JumpPath(T=5.0, jump_times=np.array([0.0]), sites=np.zeros((1, 1), dtype=np.int64))
    assert collision_time(one, one, 5.0) == 5.0
    hop = JumpPath(
        T=5.0,
        jump_times=np.array([0.0, 1.0, 4.0]),
        sites=np.array([[0], [1], [0]]),
    )
    # coincide on [0,1) and [4,5]
    assert collision_time(one, hop, 5.0) == pytest.approx(2.0)
    assert collision_time(one, hop, 0.5) == pytest.approx(0.5)
    assert collision_time(one, hop, 2.0) == pytest.approx(1.0)


def test_mean_collision_time_matches_quadrature():
    # path-pair Monte Carlo against adaptive quadrature of the closed-form
    # collision kernel: two fully independent routes to E[L_T]
    params = ModelParams(d=3, kappa=1.0, dt=0.01, T=3.0, replicas=1, master_seed=77)
    L = sample_collision_times(params, T=3.0, n_pairs=4000)
    target = collision_green(3.0, 3, 1.0)
    se = L.std(ddof=1) / np.sqrt(L.size)
    assert abs(L.mean() - target) < 4.0 * se
    # rerunning reproduces the exact sample
    again = sample_collision_times(params, T=3.0, n_pairs=4000)
    assert np.array_equal(L, again)


def test_feynman_kac_agrees_with_solver_on_the_same_environment():
    # with per-step exact diffusion the solver's Z is the expectation of
    # the path weight over the identical time-frozen position chain, so
    # the estimate must agree within its own error bars
    p = ModelParams(d=1, kappa=1.0, beta=0.3, dt=0.01, T=1.0, replicas=1)
    z = run_replica(p, 0, exact_diffusion=True).Z[-1]
    env = EnvironmentGrid(
        master_seed=p.master_seed, replica_index=0, dt=p.dt, d=1, box_radius=p.box_radius
    )
    paths = sample_paths(p, T=1.0, n_paths=4000)
    est = feynman_kac_Z(paths, env, p)
    assert not est.high_variance
    assert est.stderr > 0
    assert abs(est.mean - z) < 4.0 * est.stderr


def test_high_variance_flag_on_underpowered_estimates():
    p = ModelParams(d=1, kappa=1.0, beta=2.0, dt=0.01, T=2.0, replicas=1)
    env = EnvironmentGrid(
        master_seed=1, replica_index=0, dt=p.dt, d=1, box_radius=p.box_radius
    )
    est = feynman_kac_Z(sample_paths(p, T=2.0, n_paths=10), env, p)
    assert est.high_variance
