import numpy as np
import pytest

from shapespline import (ConfigurationError, GaussianKernel, GaussianStream,
                         NoiseSpec, PhaseState, TimeGrid, h0,
                         integrate_geodesic, monte_carlo_hamiltonian,
                         simulate_kunita, simulate_sde)
from shapespline.kernels import kernel_matrix


def circle_state(n, seed, kernel):
    theta = 2 * np.pi * np.arange(n) / n
    x0 = np.stack([np.cos(theta), np.sin(theta)], axis=1).ravel()
    p0 = GaussianStream(seed).normals(2 * n)
    p0 = p0 / np.sqrt(h0(PhaseState(x0, p0, 2), kernel))
    return PhaseState(x0, p0, 2)


def test_gaussian_stream_is_deterministic():
    a = GaussianStream(42).normals(1001)
    b = GaussianStream(42).normals(1001)
    assert np.array_equal(a, b)
    c = GaussianStream(43).normals(1001)
    assert not np.array_equal(a, c)


def test_gaussian_stream_moments():
    z = GaussianStream(0).normals(200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.02
    assert abs((z**3).mean()) < 0.03


def test_noise_spec_validation():
    with pytest.raises(ConfigurationError):
        NoiseSpec("constant", eps=-0.1)
    with pytest.raises(ConfigurationError):
        NoiseSpec("state_dependent")
    with pytest.raises(ConfigurationError):
        NoiseSpec("state_dependent", amplitude_fn=lambda x, p: 1.0, bound=np.inf)
    with pytest.raises(ConfigurationError):
        NoiseSpec("multiplicative")
    spec = NoiseSpec("constant", eps=0.5, seed=3)
    assert spec.with_seed(9).seed == 9
    assert spec.with_seed(9).eps == 0.5


def test_state_dependent_noise_applies_matrix():
    spec = NoiseSpec("state_dependent", seed=0, bound=10.0,
                     amplitude_fn=lambda x, p: np.diag([1.0, 2.0]))
    out = spec.apply(np.zeros(2), np.zeros(2), np.array([1.0, 1.0]))
    assert np.allclose(out, [1.0, 2.0])


def test_sde_zero_noise_reproduces_geodesic():
    kernel = GaussianKernel(1.0)
    q0 = circle_state(6, 0, kernel)
    grid = TimeGrid(1.0, 100)
    noisy = simulate_sde(q0, grid, NoiseSpec("constant", 0.0, 0), kernel)
    clean = integrate_geodesic(q0, grid, kernel)
    assert np.allclose(noisy.xs, clean.xs, atol=1e-14)
    assert np.allclose(noisy.ps, clean.ps, atol=1e-14)


def test_sde_same_seed_is_bitwise_identical():
    kernel = GaussianKernel(1.0)
    q0 = circle_state(5, 1, kernel)
    grid = TimeGrid(0.5, 50)
    spec = NoiseSpec("constant", 0.2, seed=7)
    a = simulate_sde(q0, grid, spec, kernel)
    b = simulate_sde(q0, grid, spec, kernel)
    assert np.array_equal(a.xs, b.xs) and np.array_equal(a.ps, b.ps)
    c = simulate_sde(q0, grid, spec.with_seed(8), kernel)
    assert not np.array_equal(a.ps, c.ps)


def test_single_landmark_momentum_variance_is_eps_squared_t():
    # one landmark: p is a pure random walk, Var p_T = eps^2 T per coordinate
    kernel = GaussianKernel(1.0)
    grid = TimeGrid(1.0, 16)
    eps = 0.3
    finals = np.array([
        simulate_sde(PhaseState([0.0, 0.0], [0.0, 0.0], 2), grid,
                     NoiseSpec("constant", eps, seed), kernel).ps[-1]
        for seed in range(4000)
    ])
    var = finals.var(axis=0)
    assert np.allclose(var, eps**2, rtol=0.1)


def test_monte_carlo_slope_matches_ito_drift():
    kernel = GaussianKernel(1.0)
    n = 8
    q0 = circle_state(n, 2, kernel)
    grid = TimeGrid(1.0, 200)
    eps = 0.1
    stats = monte_carlo_hamiltonian(q0, grid, NoiseSpec("constant", eps, 0), kernel, 100)
    expected = n * 2 * eps**2 / 2.0
    assert stats.divergences == 0
    assert stats.runs == 100
    assert abs(stats.slope - expected) / expected < 0.25
    assert stats.mean_h0[0] == pytest.approx(1.0)


def test_monte_carlo_requires_two_runs():
    kernel = GaussianKernel(1.0)
    q0 = circle_state(4, 3, kernel)
    with pytest.raises(ConfigurationError):
        monte_carlo_hamiltonian(q0, TimeGrid(1.0, 10), NoiseSpec("constant", 0.1, 0), kernel, 1)


def test_kunita_is_deterministic_and_first_order():
    kernel = GaussianKernel(1.0)
    theta = 2 * np.pi * np.arange(6) / 6
    x0 = np.stack([np.cos(theta), np.sin(theta)], axis=1).ravel()
    grid = TimeGrid(0.5, 40)
    a = simulate_kunita(x0, grid, 0.2, 11, kernel)
    b = simulate_kunita(x0, grid, 0.2, 11, kernel)
    assert np.array_equal(a.xs, b.xs)
    assert np.all(a.ps == 0.0)
    zero = simulate_kunita(x0, grid, 0.0, 11, kernel)
    assert np.allclose(zero.xs, x0, atol=1e-15)


def test_kunita_single_step_covariance():
    kernel = GaussianKernel(1.0)
    theta = 2 * np.pi * np.arange(4) / 4
    x0 = np.stack([np.cos(theta), np.sin(theta)], axis=1).ravel()
    dt = 0.01
    grid = TimeGrid(dt, 1)
    sigma = 0.5
    incs = np.array([simulate_kunita(x0, grid, sigma, seed, kernel).xs[1] - x0
                     for seed in range(4000)])
    cov = incs.T @ incs / incs.shape[0]
    expected = sigma**2 * dt * kernel_matrix(x0, kernel, 2)
    assert np.abs(cov - expected).max() / np.abs(expected).max() < 0.1
