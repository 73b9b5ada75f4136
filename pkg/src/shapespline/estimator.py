"""Spline estimation: minimize the control energy plus data misfit over (p0, u).

Objective

    J(p0, u) = int_0^T C(q_t, u_t) dt + gamma * sum_k |x^D_{t_k} - x_{t_k}|^2

with the trajectory driven by the controlled Hamiltonian system from the
fixed template x0. The prior on p0 is flat. The control samples are
optimized in sqrt(weight)-scaled coordinates so that the search metric
approximates the L2 inner product and is grid-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .adjoint import objective_gradient_from_trajectory
from .control_cost import ControlMetric, cost_raw
from .dynamics import ControlPath, PhaseState, TimeGrid, Trajectory, integrate_controlled, integrate_geodesic
from .errors import ConfigurationError, IntegrationDivergedError
from .kernels import GaussianKernel
from .observations import ObservationSet


@dataclass(frozen=True)
class OptimizerSettings:
    """Optimizer configuration for fit().

    ``lbfgs`` (default) drives scipy's L-BFGS-B with the exact adjoint
    gradient; ``gd`` is plain gradient descent with Armijo backtracking
    (shrink 1/2, sufficient decrease 1e-4).
    """

    method: str = "lbfgs"
    max_iter: int = 2000
    grad_tol: float = 1e-9  # absolute tolerance on the scaled gradient inf-norm
    armijo_shrink: float = 0.5
    armijo_c1: float = 1e-4
    min_step: float = 1e-18
    initial_step: float = 1.0
    # Newton polish: after the main optimizer stalls on line-search noise,
    # a few truncated-Newton steps (CG on finite-difference Hessian-vector
    # products of the exact gradient) drive the stationarity residual down.
    polish: bool = True
    polish_tol: float = 1e-8  # target stationarity max |sigma_u K_q u + P^p|
    polish_outer: int = 6
    polish_cg_iter: int = 150


@dataclass
class SplineProblem:
    """Growth-estimation problem instance."""

    x0: np.ndarray
    d: int
    obs: ObservationSet
    kernel: GaussianKernel
    metric: ControlMetric = field(default_factory=ControlMetric)
    gamma: float = 100.0
    grid: TimeGrid | None = None
    settings: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        if self.x0.size % self.d != 0:
            raise ConfigurationError("template length must be a multiple of d")
        if self.obs.configs.shape[1] != self.x0.size:
            raise ConfigurationError("observations and template disagree on n*d")
        if not self.gamma > 0.0:
            raise ConfigurationError("gamma must be positive")
        if self.grid is None:
            self.grid = default_grid(self.obs)
        self.obs.node_indices(self.grid)  # validate on-grid placement early

    @property
    def dim(self) -> int:
        return self.x0.size


def default_grid(obs: ObservationSet, min_steps_between: int = 20) -> TimeGrid:
    """Uniform grid over [0, t_M] with >= min_steps_between steps per gap."""
    times = np.concatenate([[0.0], obs.times])
    gaps = np.diff(times)
    gaps = gaps[gaps > 0]
    horizon = float(obs.times[-1])
    if horizon <= 0.0:
        raise ConfigurationError("the last observation time must be positive")
    smallest = float(gaps.min())
    steps = int(math.ceil(horizon / smallest * min_steps_between))
    return TimeGrid(horizon, steps)


@dataclass
class SplineSolution:
    """Optimized spline: initial momentum, control path and diagnostics."""

    p0: np.ndarray
    u: ControlPath
    traj: Trajectory
    objective: float
    objective_history: list
    residuals: np.ndarray
    converged: bool
    reason: str
    iterations: int
    stationarity: float  # max_t |sigma_u K_q u + P^p|


def _control_quadrature(traj: Trajectory, u: ControlPath, metric: ControlMetric,
                        kernel: GaussianKernel) -> float:
    """Per-interval Simpson quadrature of the running cost.

    Exact for the energy of the piecewise-linear control under a frozen
    metric, which keeps the discrete optimality conditions consistent with
    the continuous ones at the interval endpoints.
    """
    dt = traj.grid.dt
    total = 0.0
    for j in range(traj.grid.steps):
        u0, u1 = u.samples[j], u.samples[j + 1]
        if not (np.any(u0) or np.any(u1)):
            continue
        x0, x1 = traj.xs[j], traj.xs[j + 1]
        total += dt / 6.0 * (
            cost_raw(x0, u0, metric, kernel, traj.d)
            + 4.0 * cost_raw(0.5 * (x0 + x1), 0.5 * (u0 + u1), metric, kernel, traj.d)
            + cost_raw(x1, u1, metric, kernel, traj.d)
        )
    return total


def objective(p0: np.ndarray, u: ControlPath, prob: SplineProblem) -> float:
    """Evaluate J(p0, u) for the problem's grid, metric and data weight."""
    q0 = PhaseState(prob.x0, p0, prob.d)
    traj = integrate_controlled(q0, u, prob.kernel)
    return _objective_of_traj(traj, u, prob)


def _objective_of_traj(traj: Trajectory, u: ControlPath, prob: SplineProblem) -> float:
    run = _control_quadrature(traj, u, prob.metric, prob.kernel)
    nodes = prob.obs.node_indices(traj.grid)
    resid = traj.xs[nodes] - prob.obs.configs
    return run + prob.gamma * float(np.einsum("ki,ki->", resid, resid))


class _ScaledObjective:
    """J and its gradient in (p0, sqrt(w) * u) coordinates."""

    def __init__(self, prob: SplineProblem):
        self.prob = prob
        self.grid = prob.grid
        self.nd = prob.dim
        self.sqrt_w = np.sqrt(self.grid.node_weights())
        self.evaluations = 0

    def split(self, z: np.ndarray):
        p0 = z[: self.nd]
        su = z[self.nd:].reshape(self.grid.steps + 1, self.nd)
        u = ControlPath(self.grid, su / self.sqrt_w[:, None])
        return p0, u

    def pack(self, p0: np.ndarray, u: ControlPath) -> np.ndarray:
        return np.concatenate([p0, (u.samples * self.sqrt_w[:, None]).ravel()])

    def value_and_grad(self, z: np.ndarray):
        self.evaluations += 1
        prob = self.prob
        p0, u = self.split(z)
        traj = integrate_controlled(PhaseState(prob.x0, p0, prob.d), u, prob.kernel)
        val = _objective_of_traj(traj, u, prob)
        grad, diag = objective_gradient_from_trajectory(
            traj, u, prob.obs, prob.metric, prob.gamma, prob.kernel)
        gz = np.concatenate([grad.grad_p0, (grad.grad_u_discrete / self.sqrt_w[:, None]).ravel()])
        return val, gz, traj, grad, diag

    def value(self, z: np.ndarray) -> float:
        p0, u = self.split(z)
        return objective(p0, u, self.prob)


def _fit_lbfgs(fun: _ScaledObjective, z0: np.ndarray, settings: OptimizerSettings, j0: float):
    history = [j0]
    cache = {}

    def wrapped(z):
        try:
            val, gz, *_ = fun.value_and_grad(z)
        except IntegrationDivergedError:
            return np.inf, np.zeros_like(z)
        cache["last"] = val
        return val, gz

    def callback(_zk):
        if "last" in cache:
            history.append(min(cache["last"], history[-1]))

    res = scipy.optimize.minimize(
        wrapped, z0, jac=True, method="L-BFGS-B", callback=callback,
        options={"maxiter": settings.max_iter, "maxfun": 20 * settings.max_iter,
                 "ftol": 1e-18, "gtol": settings.grad_tol, "maxcor": 30, "maxls": 60},
    )
    return np.asarray(res.x), history, bool(res.success), str(res.message), int(res.nit)


def _fit_gd(fun: _ScaledObjective, z0: np.ndarray, settings: OptimizerSettings, j0: float):
    z = z0.copy()
    val, gz, *_ = fun.value_and_grad(z)
    history = [val]
    step = settings.initial_step
    for it in range(settings.max_iter):
        gnorm = float(np.linalg.norm(gz, ord=np.inf))
        if gnorm < settings.grad_tol:
            return z, history, True, "gradient norm below tolerance", it
        direction = -gz
        slope = float(gz @ direction)
        accepted = False
        while step >= settings.min_step:
            try:
                trial = fun.value(z + step * direction)
            except IntegrationDivergedError:
                trial = np.inf
            if trial <= val + settings.armijo_c1 * step * slope:
                accepted = True
                break
            step *= settings.armijo_shrink
        if not accepted:
            return z, history, False, "line search failed to find a descent step", it
        z = z + step * direction
        val, gz, *_ = fun.value_and_grad(z)
        history.append(val)
        step = min(step / settings.armijo_shrink, 1e6)
    return z, history, False, "maximum iterations reached", settings.max_iter


def _polish(fun: _ScaledObjective, z: np.ndarray, settings: OptimizerSettings) -> np.ndarray:
    """Truncated-Newton refinement driven purely by the gradient.

    Line-search optimizers stall once objective improvements drop below the
    floating-point resolution of J; the exact adjoint gradient is still
    informative there. Each outer step solves H s = -g by conjugate gradient
    with Hessian-vector products from central differences of the gradient,
    and is accepted when it reduces the gradient norm.
    """
    try:
        _, gz, _, _, diag = fun.value_and_grad(z)
    except IntegrationDivergedError:
        return z
    for _ in range(settings.polish_outer):
        if diag["stationarity"] <= settings.polish_tol:
            break
        h = 1e-6 * (1.0 + float(np.linalg.norm(z)))

        def hess_vec(v):
            nv = float(np.linalg.norm(v))
            gp = fun.value_and_grad(z + (h / nv) * v)[1]
            gm = fun.value_and_grad(z - (h / nv) * v)[1]
            return (gp - gm) * (nv / (2.0 * h))

        b = -gz
        s = np.zeros_like(z)
        r = b.copy()
        p = r.copy()
        rs = float(r @ r)
        try:
            for _cg in range(settings.polish_cg_iter):
                ap = hess_vec(p)
                pap = float(p @ ap)
                if pap <= 0.0:
                    break  # negative-curvature direction: keep the partial step
                alpha = rs / pap
                s += alpha * p
                r -= alpha * ap
                rs_new = float(r @ r)
                if np.sqrt(rs_new) <= 1e-12 * np.linalg.norm(b):
                    break
                p = r + (rs_new / rs) * p
                rs = rs_new
        except IntegrationDivergedError:
            break
        accepted = False
        for scale in (1.0, 0.5, 0.25):
            try:
                _, gz_new, _, _, diag_new = fun.value_and_grad(z + scale * s)
            except IntegrationDivergedError:
                continue
            if np.linalg.norm(gz_new) < np.linalg.norm(gz):
                z = z + scale * s
                gz, diag = gz_new, diag_new
                accepted = True
                break
        if not accepted:
            break
    return z


def fit(prob: SplineProblem) -> SplineSolution:
    """Minimize the spline objective jointly over (p0, u) from a rest start."""
    fun = _ScaledObjective(prob)
    z0 = np.zeros(prob.dim * (prob.grid.steps + 2))
    j0 = fun.value(z0)
    if prob.settings.method == "gd":
        z, history, converged, reason, iters = _fit_gd(fun, z0, prob.settings, j0)
    elif prob.settings.method == "lbfgs":
        z, history, converged, reason, iters = _fit_lbfgs(fun, z0, prob.settings, j0)
    else:
        raise ConfigurationError(f"unknown optimizer method {prob.settings.method!r}")
    if prob.settings.polish:
        z = _polish(fun, z, prob.settings)
    val, _gz, traj, grad, diag = fun.value_and_grad(z)
    history.append(min(val, history[-1]) if history else val)
    p0, u = fun.split(z)
    return SplineSolution(
        p0=p0, u=u, traj=traj, objective=val, objective_history=history,
        residuals=diag["residuals"], converged=converged, reason=reason,
        iterations=iters, stationarity=diag["stationarity"],
    )


def extrapolate(sol: SplineSolution, t_end: float, prob: SplineProblem) -> Trajectory:
    """Extend a fitted spline geodesically (u = 0) beyond the horizon.

    The concatenated path is C1 in x at the junction because the optimal
    control vanishes at the boundary (natural-spline boundary condition).
    """
    grid = sol.traj.grid
    if t_end <= grid.horizon:
        raise ConfigurationError("t_end must exceed the fitting horizon")
    extra = t_end - grid.horizon
    extra_steps = max(1, int(math.ceil(extra / grid.dt)))
    tail_grid = TimeGrid(extra_steps * grid.dt, extra_steps)
    tail = integrate_geodesic(sol.traj.state(grid.steps), tail_grid, prob.kernel)
    xs = np.vstack([sol.traj.xs, tail.xs[1:]])
    ps = np.vstack([sol.traj.ps, tail.ps[1:]])
    total = TimeGrid(grid.horizon + tail_grid.horizon, grid.steps + extra_steps)
    return Trajectory(total, xs, ps, prob.d)


def extrapolate_backward(sol: SplineSolution, t_begin: float, prob: SplineProblem) -> Trajectory:
    """Geodesic extension before t = 0, by flowing the reversed momentum.

    Returns a trajectory on [t_begin, 0] in forward time order.
    """
    if t_begin >= 0.0:
        raise ConfigurationError("t_begin must be negative")
    grid = sol.traj.grid
    steps = max(1, int(math.ceil(-t_begin / grid.dt)))
    back_grid = TimeGrid(steps * grid.dt, steps)
    q0 = sol.traj.state(0)
    rev = integrate_geodesic(PhaseState(q0.x, -q0.p, prob.d), back_grid, prob.kernel)
    xs = rev.xs[::-1].copy()
    ps = -rev.ps[::-1]
    return Trajectory(back_grid, xs, ps, prob.d, t0=-back_grid.horizon)
