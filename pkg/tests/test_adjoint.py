import numpy as np
import pytest

from shapespline import (ControlMetric, ControlPath, GaussianKernel,
                         ObservationSet, PhaseState, TimeGrid,
                         integrate_controlled, integrate_costate,
                         integrate_linearized, objective_gradient)
from shapespline.adjoint import step_tangent, step_vjp
from shapespline.dynamics import rk4_step
from shapespline.estimator import SplineProblem, objective

METRIC_IDS = ["euclidean", "dualkernel", "measure"]
METRICS = [ControlMetric("euclidean"),
           ControlMetric("dualkernel", weight=0.5),
           ControlMetric("measure", measure_width=1.2)]


def random_setup(n, seed, steps=8):
    rng = np.random.Generator(np.random.PCG64(seed))
    nd = 2 * n
    grid = TimeGrid(1.0, steps)
    q0 = PhaseState(rng.standard_normal(nd), 0.4 * rng.standard_normal(nd), 2)
    u = ControlPath(grid, 0.5 * rng.standard_normal((steps + 1, nd)))
    return rng, grid, q0, u


def test_step_tangent_matches_finite_differences():
    kernel = GaussianKernel(1.0)
    rng, grid, q0, u = random_setup(3, 0)
    dt = grid.dt
    u0, um, u1 = u.samples[0], 0.5 * (u.samples[0] + u.samples[1]), u.samples[1]
    dq = rng.standard_normal(12)
    du0, dum, du1 = (rng.standard_normal(6) for _ in range(3))
    h = 1e-6

    def step(scale):
        x = q0.x + scale * h * dq[:6]
        p = q0.p + scale * h * dq[6:]
        xn, pn = rk4_step(x, p, u0 + scale * h * du0, um + scale * h * dum,
                          u1 + scale * h * du1, dt, 2, kernel)
        return np.concatenate([xn, pn])

    fd = (step(1.0) - step(-1.0)) / (2 * h)
    tang = step_tangent(q0.x, q0.p, u0, um, u1, dt, 2, kernel, dq, du0, dum, du1)
    assert np.allclose(tang, fd, atol=1e-7)


def test_step_vjp_is_transpose_of_step_tangent():
    kernel = GaussianKernel(0.8)
    rng, grid, q0, u = random_setup(3, 1)
    dt = grid.dt
    u0, um, u1 = u.samples[0], 0.5 * (u.samples[0] + u.samples[1]), u.samples[1]
    for trial in range(5):
        dq = rng.standard_normal(12)
        du0, dum, du1 = (rng.standard_normal(6) for _ in range(3))
        adj = rng.standard_normal(12)
        tang = step_tangent(q0.x, q0.p, u0, um, u1, dt, 2, kernel, dq, du0, dum, du1)
        bq, bu0, bum, bu1 = step_vjp(q0.x, q0.p, u0, um, u1, dt, 2, kernel, adj)
        lhs = float(adj @ tang)
        rhs = float(bq @ dq + bu0 @ du0 + bum @ dum + bu1 @ du1)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_integrate_linearized_matches_trajectory_differences():
    kernel = GaussianKernel(1.0)
    rng, grid, q0, u = random_setup(3, 2)
    traj = integrate_controlled(q0, u, kernel)
    dq0 = rng.standard_normal(12)
    du = ControlPath(grid, rng.standard_normal(u.samples.shape))
    h = 1e-6

    def perturbed(scale):
        q = PhaseState(q0.x + scale * h * dq0[:6], q0.p + scale * h * dq0[6:], 2)
        up = ControlPath(grid, u.samples + scale * h * du.samples)
        return integrate_controlled(q, up, kernel)

    tp, tm = perturbed(1.0), perturbed(-1.0)
    fd = np.concatenate([tp.xs - tm.xs, tp.ps - tm.ps], axis=1) / (2 * h)
    lin = integrate_linearized(traj, u, dq0, du, kernel)
    assert np.allclose(lin, fd, atol=1e-6)


@pytest.mark.parametrize("metric", METRICS, ids=METRIC_IDS)
@pytest.mark.parametrize("seed", range(3))
def test_objective_gradient_matches_finite_differences(metric, seed):
    kernel = GaussianKernel(1.0)
    rng, grid, q0, u = random_setup(3, 40 + seed)
    obs = ObservationSet([0.5, 1.0], rng.standard_normal((2, 6)))
    prob = SplineProblem(q0.x, 2, obs, kernel, metric=metric, gamma=10.0, grid=grid)
    grad, _ = objective_gradient(q0, u, obs, metric, 10.0, kernel)
    h = 1e-6
    for trial in range(5):
        dp0 = rng.standard_normal(6)
        du = rng.standard_normal(u.samples.shape)

        def value(scale):
            up = ControlPath(grid, u.samples + scale * h * du)
            return objective(q0.p + scale * h * dp0, up, prob)

        fd = (value(1.0) - value(-1.0)) / (2 * h)
        exact = grad.pair(dp0, du)
        assert exact == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_costate_terminal_value_and_jump_log():
    kernel = GaussianKernel(1.0)
    rng, grid, q0, u = random_setup(3, 5)
    metric = ControlMetric("euclidean")
    obs = ObservationSet([0.5, 1.0], rng.standard_normal((2, 6)))
    traj = integrate_controlled(q0, u, kernel)
    costate = integrate_costate(traj, u, obs, metric, 10.0, kernel)
    nodes = [j for j, _ in costate.jumps]
    assert nodes == [4, 8]
    # terminal costate carries only the data jump of the last observation
    jump = costate.jumps[-1][1]
    terminal_cost = costate.values[-1] - jump
    assert np.allclose(terminal_cost[:6], 0.0, atol=1e-12)
    assert np.allclose(costate.values[-1][6:], 0.0, atol=1e-12)
