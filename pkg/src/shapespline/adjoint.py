"""Tangent and adjoint sweeps of the controlled phase-space integration.

The forward integrator is fixed-step RK4, so the gradient machinery works on
the exact tangent and transpose of the discrete step map. The backward sweep
is therefore itself a fourth-order backward integration of the costate
equation dP/dt = -df/dq^T P - grad_q C, with the data-attachment jumps
applied exactly at the observation nodes; its pairing with a perturbation
reproduces the derivative of the discretized objective to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control_cost import ControlMetric, cost_grad_u_raw, cost_grad_x_raw, EUCLIDEAN
from .dynamics import (ControlPath, Trajectory, phase_jacobian_batch, vector_field,
                       vector_field_batch)
from .errors import ConfigurationError, GridMismatchError
from .kernels import GaussianKernel
from .observations import ObservationSet


def _stage_jacobians(x, p, u0, um, u1, dt, d, kernel):
    """Phase jacobians at the four RK4 stage states of one step."""
    k1 = vector_field(x, p, u0, d, kernel)
    x2, p2 = x + 0.5 * dt * k1[0], p + 0.5 * dt * k1[1]
    k2 = vector_field(x2, p2, um, d, kernel)
    x3, p3 = x + 0.5 * dt * k2[0], p + 0.5 * dt * k2[1]
    k3 = vector_field(x3, p3, um, d, kernel)
    x4, p4 = x + dt * k3[0], p + dt * k3[1]
    xs = np.stack([x, x2, x3, x4])
    ps = np.stack([p, p2, p3, p4])
    return phase_jacobian_batch(xs, ps, d, kernel)


def step_tangent(x, p, u0, um, u1, dt, d, kernel, dq, du0, dum, du1):
    """Exact derivative of one RK4 step applied to (dq, du...)."""
    nd = x.size
    jacs = _stage_jacobians(x, p, u0, um, u1, dt, d, kernel)

    def src(du):
        return np.concatenate([np.zeros(nd), du])

    dk1 = jacs[0] @ dq + src(du0)
    dk2 = jacs[1] @ (dq + 0.5 * dt * dk1) + src(dum)
    dk3 = jacs[2] @ (dq + 0.5 * dt * dk2) + src(dum)
    dk4 = jacs[3] @ (dq + dt * dk3) + src(du1)
    return dq + dt / 6.0 * (dk1 + 2 * dk2 + 2 * dk3 + dk4)


def step_vjp(x, p, u0, um, u1, dt, d, kernel, adj):
    """Transpose of the RK4 step derivative.

    Given the adjoint of the step output, returns the adjoint of the step
    input state and of the three control samples (start, midpoint, end).
    """
    jacs = _stage_jacobians(x, p, u0, um, u1, dt, d, kernel)
    return _step_vjp_from_jacs(jacs, dt, adj, x.size)


def integrate_linearized(traj: Trajectory, u: ControlPath, dq0: np.ndarray,
                         du: ControlPath, kernel: GaussianKernel) -> np.ndarray:
    """Forward integration of the linearized system along a stored trajectory.

    Returns delta-q at every node, shape (N+1, 2*n*d). Serves as the
    verification oracle for the adjoint sweep.
    """
    if u.grid != traj.grid or du.grid != traj.grid:
        raise GridMismatchError("control grids must match the trajectory grid")
    nd = traj.xs.shape[1]
    dq0 = np.asarray(dq0, dtype=float).ravel()
    if dq0.size != 2 * nd:
        raise GridMismatchError("initial perturbation must have length 2*n*d")
    dt = traj.grid.dt
    out = np.empty((traj.grid.steps + 1, 2 * nd))
    out[0] = dq0
    for j in range(traj.grid.steps):
        u0, u1 = u.samples[j], u.samples[j + 1]
        du0, du1 = du.samples[j], du.samples[j + 1]
        out[j + 1] = step_tangent(
            traj.xs[j], traj.ps[j], u0, 0.5 * (u0 + u1), u1, dt, traj.d, kernel,
            out[j], du0, 0.5 * (du0 + du1), du1,
        )
    return out


def _chunk_stage_jacobians(traj: Trajectory, u: ControlPath, kernel: GaussianKernel,
                           lo: int, hi: int) -> np.ndarray:
    """Stage jacobians for steps lo..hi-1, batched; shape (hi-lo, 4, 2nd, 2nd)."""
    dt = traj.grid.dt
    xs, ps = traj.xs[lo:hi], traj.ps[lo:hi]
    u0 = u.samples[lo:hi]
    u1 = u.samples[lo + 1:hi + 1]
    um = 0.5 * (u0 + u1)
    k1x, k1p = vector_field_batch(xs, ps, u0, traj.d, kernel)
    x2, p2 = xs + 0.5 * dt * k1x, ps + 0.5 * dt * k1p
    k2x, k2p = vector_field_batch(x2, p2, um, traj.d, kernel)
    x3, p3 = xs + 0.5 * dt * k2x, ps + 0.5 * dt * k2p
    k3x, k3p = vector_field_batch(x3, p3, um, traj.d, kernel)
    x4, p4 = xs + dt * k3x, ps + dt * k3p
    stacked_x = np.stack([xs, x2, x3, x4], axis=1).reshape(4 * (hi - lo), -1)
    stacked_p = np.stack([ps, p2, p3, p4], axis=1).reshape(4 * (hi - lo), -1)
    jacs = phase_jacobian_batch(stacked_x, stacked_p, traj.d, kernel)
    return jacs.reshape(hi - lo, 4, jacs.shape[1], jacs.shape[2])


def _step_vjp_from_jacs(jacs, dt, adj, nd):
    """Transpose tangent of one RK4 step, given its four stage jacobians."""
    bar_k4 = dt / 6.0 * adj
    bar_q = adj.copy()

    bar_s4 = jacs[3].T @ bar_k4
    bar_u1 = bar_k4[nd:].copy()
    bar_q += bar_s4
    bar_k3 = dt / 3.0 * adj + dt * bar_s4

    bar_s3 = jacs[2].T @ bar_k3
    bar_um = bar_k3[nd:].copy()
    bar_q += bar_s3
    bar_k2 = dt / 3.0 * adj + 0.5 * dt * bar_s3

    bar_s2 = jacs[1].T @ bar_k2
    bar_um += bar_k2[nd:]
    bar_q += bar_s2
    bar_k1 = dt / 6.0 * adj + 0.5 * dt * bar_s2

    bar_s1 = jacs[0].T @ bar_k1
    bar_u0 = bar_k1[nd:].copy()
    bar_q += bar_s1

    return bar_q, bar_u0, bar_um, bar_u1


def reverse_sweep(traj: Trajectory, u: ControlPath, kernel: GaussianKernel,
                  node_q_grad: np.ndarray):
    """Backward adjoint sweep with per-node source terms.

    node_q_grad[j] is the gradient of all node-local objective terms
    (quadrature-weighted running cost, observation jumps) with respect to q_j.
    Returns the adjoint states lambda (N+1, 2nd) and the accumulated gradient
    of the dynamics terms with respect to the control samples (N+1, nd).

    Stage jacobians are rebuilt in batched chunks (bounded memory) and then
    consumed by the sequential backward recursion.
    """
    nsteps = traj.grid.steps
    nd = traj.xs.shape[1]
    dt = traj.grid.dt
    lams = np.empty((nsteps + 1, 2 * nd))
    gbar_u = np.zeros((nsteps + 1, nd))
    lams[nsteps] = node_q_grad[nsteps]
    chunk = max(1, min(nsteps, 2_000_000 // (4 * (2 * nd) ** 2)))
    hi = nsteps
    while hi > 0:
        lo = max(0, hi - chunk)
        jacs = _chunk_stage_jacobians(traj, u, kernel, lo, hi)
        for j in range(hi - 1, lo - 1, -1):
            bar_q, bu0, bum, bu1 = _step_vjp_from_jacs(jacs[j - lo], dt, lams[j + 1], nd)
            gbar_u[j] += bu0 + 0.5 * bum
            gbar_u[j + 1] += bu1 + 0.5 * bum
            lams[j] = bar_q + node_q_grad[j]
        hi = lo
    return lams, gbar_u


@dataclass
class CostateTrajectory:
    """Adjoint states at grid nodes, terminal value zero, with jump log."""

    grid: object
    values: np.ndarray  # (N+1, 2*n*d), partitioned as (P^x, P^p)
    jumps: list = field(default_factory=list)  # (node index, jump vector)


@dataclass
class ObjectiveGradient:
    """L2 Riesz representers of the objective derivative.

    grad_u holds the representer sigma_u * K_q u + P^p at each node; pairing
    against a perturbation uses the trapezoidal node weights (see pair()).
    grad_u_discrete is the raw derivative with respect to the control samples.
    """

    grad_p0: np.ndarray
    grad_u: np.ndarray
    grad_u_discrete: np.ndarray
    weights: np.ndarray

    def pair(self, dp0: np.ndarray, du: np.ndarray) -> float:
        """Directional derivative against a perturbation (dp0, du)."""
        return float(self.grad_p0 @ dp0 + np.einsum("ji,ji->", self.grad_u_discrete, du))


def _quadrature_cost_grads(traj: Trajectory, u: ControlPath, metric: ControlMetric,
                           kernel: GaussianKernel):
    """Node gradients of the Simpson running-cost quadrature.

    Each interval contributes dt/6 (C_0 + 4 C_mid + C_1) with the midpoint
    state and control averaged from the endpoints; the midpoint terms spread
    half their gradient to each adjacent node. Returns (gx, gu), both shaped
    (N+1, n*d).
    """
    nsteps = traj.grid.steps
    nd = traj.xs.shape[1]
    dt = traj.grid.dt
    gx = np.zeros((nsteps + 1, nd))
    gu = np.zeros((nsteps + 1, nd))
    state_dep = metric.variant != EUCLIDEAN
    for j in range(nsteps):
        u0, u1 = u.samples[j], u.samples[j + 1]
        if not (np.any(u0) or np.any(u1)):
            continue
        x0, x1 = traj.xs[j], traj.xs[j + 1]
        xm, um = 0.5 * (x0 + x1), 0.5 * (u0 + u1)
        gum = dt / 3.0 * cost_grad_u_raw(xm, um, metric, kernel, traj.d)
        gu[j] += dt / 6.0 * cost_grad_u_raw(x0, u0, metric, kernel, traj.d) + gum
        gu[j + 1] += dt / 6.0 * cost_grad_u_raw(x1, u1, metric, kernel, traj.d) + gum
        if state_dep:
            gxm = dt / 3.0 * cost_grad_x_raw(xm, um, metric, kernel, traj.d)
            gx[j] += dt / 6.0 * cost_grad_x_raw(x0, u0, metric, kernel, traj.d) + gxm
            gx[j + 1] += dt / 6.0 * cost_grad_x_raw(x1, u1, metric, kernel, traj.d) + gxm
    return gx, gu


def _node_objective_grads(traj: Trajectory, u: ControlPath, obs: ObservationSet,
                          metric: ControlMetric, gamma: float, kernel: GaussianKernel):
    """Per-node gradients of the quadrature cost plus data-attachment jumps."""
    nsteps = traj.grid.steps
    nd = traj.xs.shape[1]
    node_grad = np.zeros((nsteps + 1, 2 * nd))
    gx, gu = _quadrature_cost_grads(traj, u, metric, kernel)
    node_grad[:, :nd] = gx
    jumps = []
    for k, j in enumerate(obs.node_indices(traj.grid)):
        jump = np.concatenate([2.0 * gamma * (traj.xs[j] - obs.configs[k]), np.zeros(nd)])
        node_grad[j] += jump
        jumps.append((int(j), jump))
    return node_grad, gu, jumps


def integrate_costate(traj: Trajectory, u: ControlPath, obs: ObservationSet,
                      metric: ControlMetric, gamma: float,
                      kernel: GaussianKernel) -> CostateTrajectory:
    """Backward integration of the costate with observation-time jumps."""
    if u.grid != traj.grid:
        raise ConfigurationError("control grid must match the trajectory grid")
    node_grad, _gu, jumps = _node_objective_grads(traj, u, obs, metric, gamma, kernel)
    lams, _ = reverse_sweep(traj, u, kernel, node_grad)
    return CostateTrajectory(traj.grid, lams, jumps)


def objective_gradient(q0, u: ControlPath, obs: ObservationSet, metric: ControlMetric,
                       gamma: float, kernel: GaussianKernel):
    """Gradient of the spline objective with respect to (p0, u).

    Integrates the controlled system from q0 and delegates to
    :func:`objective_gradient_from_trajectory`.
    """
    from .dynamics import integrate_controlled

    traj = integrate_controlled(q0, u, kernel)
    return objective_gradient_from_trajectory(traj, u, obs, metric, gamma, kernel)


def objective_gradient_from_trajectory(traj: Trajectory, u: ControlPath, obs: ObservationSet,
                                       metric: ControlMetric, gamma: float, kernel: GaussianKernel):
    """Gradient of the spline objective with respect to (p0, u).

    x_0 is held fixed; its gradient component is discarded. Returns the
    gradient object and a diagnostics dict (costate, residuals).
    """
    nd = traj.xs.shape[1]
    node_grad, gu, jumps = _node_objective_grads(traj, u, obs, metric, gamma, kernel)
    lams, gbar_u = reverse_sweep(traj, u, kernel, node_grad)
    w = traj.grid.node_weights()
    grad_u_disc = gbar_u + gu
    grad_u = grad_u_disc / w[:, None]
    grad = ObjectiveGradient(
        grad_p0=lams[0, nd:].copy(),
        grad_u=grad_u,
        grad_u_discrete=grad_u_disc,
        weights=w,
    )
    nodes = obs.node_indices(traj.grid)
    residuals = np.array([np.linalg.norm(traj.xs[j] - obs.configs[k]) for k, j in enumerate(nodes)])
    diagnostics = {
        "costate": CostateTrajectory(traj.grid, lams, jumps),
        "residuals": residuals,
        "stationarity": float(np.max(np.abs(grad_u))),
    }
    return grad, diagnostics
