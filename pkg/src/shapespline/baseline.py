"""Piecewise-geodesic interpolation baseline and the trajectory-error harness.

The baseline minimizes the kinetic energy int h0 dt plus the data misfit over
trajectories that are geodesic between observations, with momentum jumps at
the interior observation nodes. It is parameterized by (p0, jumps) and
optimized with the same discrete-adjoint machinery as the spline estimator
(the jumps act as impulsive controls at known nodes).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .adjoint import reverse_sweep
from .dynamics import (ControlPath, PhaseState, TimeGrid, Trajectory,
                       dh0_dp_raw, dh0_dx_raw, h0_raw, integrate_geodesic)
from .errors import ConfigurationError, GridMismatchError, IntegrationDivergedError
from .estimator import SplineProblem, SplineSolution, fit
from .kernels import GaussianKernel


@dataclass
class PiecewiseGeodesicSolution:
    """Optimized piecewise-geodesic path: x continuous, p jumps at obs nodes."""

    p0: np.ndarray
    jumps: np.ndarray  # (M-1, n*d), applied at t_1 .. t_{M-1}
    traj: Trajectory  # momenta stored post-jump at jump nodes
    pre_jump_momenta: dict  # node index -> pre-jump momentum
    objective: float
    objective_history: list
    residuals: np.ndarray
    converged: bool
    reason: str
    kinetic_energy: float


def _segment_bounds(obs_nodes: np.ndarray, nsteps: int):
    cuts = [0] + [int(j) for j in obs_nodes[:-1]] + [nsteps]
    return [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]


class _PiecewiseObjective:
    def __init__(self, prob: SplineProblem):
        self.prob = prob
        self.grid = prob.grid
        self.nd = prob.dim
        self.obs_nodes = prob.obs.node_indices(self.grid)
        self.segments = _segment_bounds(self.obs_nodes, self.grid.steps)
        self.n_jumps = len(prob.obs) - 1

    def split(self, z: np.ndarray):
        p0 = z[: self.nd]
        jumps = z[self.nd:].reshape(self.n_jumps, self.nd)
        return p0, jumps

    def forward(self, p0: np.ndarray, jumps: np.ndarray):
        prob = self.prob
        grid = self.grid
        dt = grid.dt
        xs = np.empty((grid.steps + 1, self.nd))
        ps = np.empty_like(xs)
        xs[0], ps[0] = prob.x0, p0
        pre_p = {}
        kinetic = 0.0
        for k, (a, b) in enumerate(self.segments):
            if b > a:
                seg_grid = TimeGrid((b - a) * dt, b - a)
                seg = integrate_geodesic(PhaseState(xs[a], ps[a], prob.d), seg_grid, prob.kernel)
                xs[a:b + 1] = seg.xs
                ps[a:b + 1] = seg.ps
                vals = np.array([h0_raw(seg.xs[j], seg.ps[j], prob.d, prob.kernel)
                                 for j in range(b - a + 1)])
                kinetic += float(seg_grid.node_weights() @ vals)
            if k < len(self.segments) - 1:
                pre_p[b] = ps[b].copy()
                ps[b] = ps[b] + jumps[k]
        resid = xs[self.obs_nodes] - prob.obs.configs
        data = prob.gamma * float(np.einsum("ki,ki->", resid, resid))
        traj = Trajectory(grid, xs, ps, prob.d)
        return traj, pre_p, kinetic, kinetic + data

    def value_and_grad(self, z: np.ndarray):
        prob = self.prob
        dt = self.grid.dt
        p0, jumps = self.split(z)
        traj, pre_p, kinetic, val = self.forward(p0, jumps)
        grad_jumps = np.zeros_like(jumps)
        lam_in = np.zeros(2 * self.nd)
        for k in range(len(self.segments) - 1, -1, -1):
            a, b = self.segments[k]
            if k < len(self.segments) - 1:
                grad_jumps[k] = lam_in[self.nd:]
            seg_len = b - a
            # segment states: post-jump at a, pre-jump at b
            seg_xs = traj.xs[a:b + 1].copy()
            seg_ps = traj.ps[a:b + 1].copy()
            if b in pre_p:
                seg_ps[-1] = pre_p[b]
            if seg_len == 0:
                lam_in = lam_in + self._node_grad(seg_xs[0], seg_ps[0], 0.0, a, False)
                continue
            seg_grid = TimeGrid(seg_len * dt, seg_len)
            w = seg_grid.node_weights()
            node_grad = np.empty((seg_len + 1, 2 * self.nd))
            for j in range(seg_len + 1):
                # observation jumps live at segment-end nodes; crediting them
                # only to the segment they close avoids double counting at
                # shared boundaries
                node_grad[j] = self._node_grad(seg_xs[j], seg_ps[j], w[j], a + j, j > 0)
            node_grad[-1] += lam_in
            seg_traj = Trajectory(seg_grid, seg_xs, seg_ps, prob.d)
            lams, _ = reverse_sweep(seg_traj, ControlPath.zero(seg_grid, self.nd),
                                    prob.kernel, node_grad)
            lam_in = lams[0]
        grad_p0 = lam_in[self.nd:]
        return val, np.concatenate([grad_p0, grad_jumps.ravel()]), traj, kinetic

    def _node_grad(self, x, p, weight, node, with_obs):
        g = np.concatenate([
            weight * dh0_dx_raw(x, p, self.prob.d, self.prob.kernel),
            weight * dh0_dp_raw(x, p, self.prob.d, self.prob.kernel),
        ])
        if with_obs:
            for k in np.nonzero(self.obs_nodes == node)[0]:
                g[: self.nd] += 2.0 * self.prob.gamma * (x - self.prob.obs.configs[k])
        return g


def fit_piecewise_geodesic(prob: SplineProblem) -> PiecewiseGeodesicSolution:
    """Fit the piecewise-geodesic baseline by L-BFGS over (p0, jumps)."""
    fun = _PiecewiseObjective(prob)
    z0 = np.zeros(prob.dim * (1 + fun.n_jumps))
    history = []
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
            prev = history[-1] if history else np.inf
            history.append(min(cache["last"], prev))

    history.append(wrapped(z0)[0])
    res = scipy.optimize.minimize(
        wrapped, z0, jac=True, method="L-BFGS-B", callback=callback,
        options={"maxiter": prob.settings.max_iter, "ftol": 1e-18,
                 "gtol": prob.settings.grad_tol, "maxcor": 30, "maxls": 60},
    )
    val, _gz, traj, kinetic = fun.value_and_grad(np.asarray(res.x))
    p0, jumps = fun.split(np.asarray(res.x))
    _, pre_p, _, _ = fun.forward(p0, jumps)
    resid = np.array([np.linalg.norm(traj.xs[j] - prob.obs.configs[k])
                      for k, j in enumerate(fun.obs_nodes)])
    return PiecewiseGeodesicSolution(
        p0=p0, jumps=jumps, traj=traj, pre_jump_momenta=pre_p, objective=val,
        objective_history=history, residuals=resid, converged=bool(res.success),
        reason=str(res.message), kinetic_energy=kinetic,
    )


def l2_error(traj: Trajectory, reference: np.ndarray,
             start_node: int = 0, end_node: int | None = None) -> float:
    """L2 trajectory error (int |x_ref - x|^2 dt)^(1/2) on [t_start, t_end].

    ``reference`` must hold positions on the trajectory's grid restricted to
    the node range [start_node, end_node].
    """
    if end_node is None:
        end_node = traj.grid.steps
    seg = traj.xs[start_node:end_node + 1]
    reference = np.asarray(reference, dtype=float)
    if reference.shape != seg.shape:
        raise GridMismatchError(
            f"reference shape {reference.shape} does not match trajectory nodes {seg.shape}")
    diff = seg - reference
    sq = np.einsum("ji,ji->j", diff, diff)
    return float(np.sqrt(np.trapezoid(sq, dx=traj.grid.dt)))


@dataclass
class StudyRow:
    method: str
    observations: int
    error: float | None
    runtime_seconds: float
    failure: str | None = None


@dataclass
class StudyResult:
    rows: list
    slope: float | None  # log-log slope of error vs interval count M - 1
    degenerate: bool = False


def convergence_study(truth_xs: np.ndarray, grid: TimeGrid, d: int,
                      m_list, method: str, kernel: GaussianKernel,
                      make_problem=None, error_floor: float = 1e-8) -> StudyResult:
    """Error-vs-M study against a dense ground truth on the fitting grid.

    For each M, observations are sampled at uniformly spaced nodes of the
    truth, the chosen method ("spline" or "piecewise") is fitted and the L2
    error against the dense truth is recorded. The rate is an ordinary
    least-squares fit of log error against log(M - 1) -- the number of
    interpolation intervals, so that the slope estimates the classical
    exponent alpha in E = O(h^alpha) with h the knot spacing. Failed rows and
    rows below the numerical floor are excluded from the regression.
    """
    from .observations import ObservationSet

    if method not in ("spline", "piecewise"):
        raise ConfigurationError(f"unknown method {method!r}")
    if sorted(m_list) != list(m_list) or min(m_list) < 2:
        raise ConfigurationError("m_list must be increasing with every entry >= 2")
    rows = []
    for m in m_list:
        nodes = np.unique(np.round(np.linspace(0, grid.steps, m)).astype(int))
        times = nodes * grid.dt
        # the template pins t=0, so the first sampled node becomes a plain
        # (exactly satisfied) observation; nudge its time to stay increasing
        obs = ObservationSet(np.maximum(times, grid.dt * 1e-9), truth_xs[nodes])
        start = time.perf_counter()
        try:
            prob = SplineProblem(truth_xs[0], d, obs, kernel, grid=grid)
            if make_problem is not None:
                prob = make_problem(prob)
            if method == "spline":
                sol: SplineSolution = fit(prob)
                traj = sol.traj
            else:
                traj = fit_piecewise_geodesic(prob).traj
            first, last = int(nodes[0]), int(nodes[-1])
            err = l2_error(traj, truth_xs[first:last + 1], first, last)
            rows.append(StudyRow(method, m, err, time.perf_counter() - start))
        except (IntegrationDivergedError, ConfigurationError) as exc:
            rows.append(StudyRow(method, m, None, time.perf_counter() - start, repr(exc)))
    usable = [(r.observations, r.error) for r in rows
              if r.error is not None and r.error > error_floor]
    if len(usable) < 2:
        return StudyResult(rows, None, degenerate=True)
    logm = np.log([m - 1 for m, _ in usable])
    loge = np.log([e for _, e in usable])
    slope = float(np.polyfit(logm, loge, 1)[0])
    return StudyResult(rows, -slope)
