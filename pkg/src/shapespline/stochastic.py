"""Stochastic second-order landmark evolution and a first-order contrast flow.

The second-order model perturbs the momentum equation of the geodesic flow
with white noise (Euler-Maruyama in time); the optional control enters the
drift exactly as in the deterministic system. The contrast model is a
first-order flow whose velocity field is spatially kernel-correlated but
white in time, so its paths are rough where the second-order paths are C1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import (ControlPath, PhaseState, TimeGrid, Trajectory, h0_raw,
                       rk4_step)
from .errors import ConfigurationError, DegenerateConfigurationError, IntegrationDivergedError
from .kernels import GaussianKernel, kernel_matrix


class GaussianStream:
    """Deterministic stream of standard normals.

    Uniform deviates come from PCG64 and are mapped through the Box-Muller
    transform, so the normal-generation algorithm is fixed and documented
    rather than inherited from whatever the numpy default happens to be.
    Identical seeds give bitwise-identical streams within one build.
    """

    def __init__(self, seed: int):
        self._uniforms = np.random.Generator(np.random.PCG64(seed))

    def normals(self, size: int) -> np.ndarray:
        pairs = (size + 1) // 2
        u1 = self._uniforms.random(pairs)
        u2 = self._uniforms.random(pairs)
        r = np.sqrt(-2.0 * np.log1p(-u1))  # 1 - u1 is uniform on (0, 1]
        ang = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(ang), r * np.sin(ang)])
        return z[:size]


@dataclass
class NoiseSpec:
    """Momentum-noise specification.

    ``kind`` is "constant" (amplitude ``eps`` >= 0) or "state_dependent",
    where ``amplitude_fn(x, p)`` returns a scalar, a per-coordinate vector or
    an (nd, nd) matrix, assumed bounded by ``bound`` and Lipschitz.
    """

    kind: str = "constant"
    eps: float = 0.0
    seed: int = 0
    amplitude_fn: Optional[Callable] = None
    bound: float = np.inf

    def __post_init__(self):
        if self.kind == "constant":
            if not self.eps >= 0.0:
                raise ConfigurationError("constant noise amplitude must be >= 0")
        elif self.kind == "state_dependent":
            if self.amplitude_fn is None:
                raise ConfigurationError("state-dependent noise requires amplitude_fn")
            if not np.isfinite(self.bound):
                raise ConfigurationError("state-dependent noise requires a finite bound")
        else:
            raise ConfigurationError(f"unknown noise kind {self.kind!r}")

    def with_seed(self, seed: int) -> "NoiseSpec":
        return NoiseSpec(self.kind, self.eps, seed, self.amplitude_fn, self.bound)

    def apply(self, x: np.ndarray, p: np.ndarray, xi: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return self.eps * xi
        amp = np.asarray(self.amplitude_fn(x, p), dtype=float)
        if amp.ndim <= 1:
            return amp * xi
        return amp @ xi


def simulate_sde(q0: PhaseState, grid: TimeGrid, noise: NoiseSpec,
                 kernel: GaussianKernel, u: ControlPath | None = None) -> Trajectory:
    """Integration of the noisy second-order system.

    Per step the deterministic drift is advanced with one RK4 step of the
    controlled Hamiltonian field and the momentum receives the Maruyama-type
    Gaussian increment evaluated at the step start:

        (x, p)_{j+1} = RK4(x_j, p_j; u) + (0, eps(x_j, p_j) sqrt(dt) xi_j)

    The noise term keeps the scheme at the usual Euler-Maruyama strong order,
    but the zero-noise limit reproduces the fourth-order geodesic integrator
    (a first-order drift leaves an O(dt) spurious trend in the kinetic energy
    that would mask the noise-induced drift being measured downstream).
    Identical seeds produce bitwise-identical trajectories.
    """
    if u is not None and u.grid != grid:
        raise ConfigurationError("control grid must match the simulation grid")
    nd = q0.x.size
    dt = grid.dt
    sqdt = np.sqrt(dt)
    stream = GaussianStream(noise.seed)
    xs = np.empty((grid.steps + 1, nd))
    ps = np.empty_like(xs)
    xs[0], ps[0] = q0.x, q0.p
    zero = np.zeros(nd)
    for j in range(grid.steps):
        x, p = xs[j], ps[j]
        if u is None:
            u0 = um = u1 = zero
        else:
            u0, u1 = u.samples[j], u.samples[j + 1]
            um = 0.5 * (u0 + u1)
        xi = stream.normals(nd)
        xs[j + 1], ps[j + 1] = rk4_step(x, p, u0, um, u1, dt, q0.d, kernel)
        ps[j + 1] = ps[j + 1] + sqdt * noise.apply(x, p, xi)
        if not (np.all(np.isfinite(xs[j + 1])) and np.all(np.isfinite(ps[j + 1]))):
            raise IntegrationDivergedError(j + 1)
    return Trajectory(grid, xs, ps, q0.d)


def simulate_kunita(x0: np.ndarray, grid: TimeGrid, sigma: float, seed: int,
                    kernel: GaussianKernel, d: int = 2) -> Trajectory:
    """First-order kernel-correlated flow (positions only, momenta zero).

        x_{j+1} = x_j + sigma sqrt(dt) L_j xi_j,   L_j L_j^T = K_{x_j} + jitter

    Increments are Gaussian with spatial covariance sigma^2 dt K_{x_j} and
    independent across steps, so paths are Brownian-rough in time.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    nd = x0.size
    stream = GaussianStream(seed)
    sqdt = np.sqrt(grid.dt)
    xs = np.empty((grid.steps + 1, nd))
    xs[0] = x0
    for j in range(grid.steps):
        kq = kernel_matrix(xs[j], kernel, d) + 1e-10 * np.eye(nd)
        try:
            chol = np.linalg.cholesky(kq)
        except np.linalg.LinAlgError as exc:
            raise DegenerateConfigurationError(
                f"kernel matrix not positive definite at step {j}") from exc
        xs[j + 1] = xs[j] + sigma * sqdt * (chol @ stream.normals(nd))
        if not np.all(np.isfinite(xs[j + 1])):
            raise IntegrationDivergedError(j + 1)
    return Trajectory(grid, xs, np.zeros_like(xs), d)


@dataclass
class EnsembleStats:
    """Per-node ensemble moments of the kinetic energy h0 across runs."""

    times: np.ndarray
    mean_h0: np.ndarray
    var_h0: np.ndarray
    runs: int
    divergences: int
    slope: float  # least-squares slope of mean_h0 against t


def monte_carlo_hamiltonian(q0: PhaseState, grid: TimeGrid, noise: NoiseSpec,
                            kernel: GaussianKernel, runs: int) -> EnsembleStats:
    """Ensemble of simulate_sde runs seeded noise.seed, noise.seed+1, ...

    Divergent runs are tallied and excluded from the moments. The slope
    estimates the linear-in-time drift of the mean kinetic energy.
    """
    if runs < 2:
        raise ConfigurationError("at least 2 Monte Carlo runs are required")
    values = []
    divergences = 0
    for r in range(runs):
        try:
            traj = simulate_sde(q0, grid, noise.with_seed(noise.seed + r), kernel)
        except IntegrationDivergedError:
            divergences += 1
            continue
        values.append([h0_raw(traj.xs[j], traj.ps[j], q0.d, kernel)
                       for j in range(grid.steps + 1)])
    if len(values) < 2:
        raise IntegrationDivergedError(0)
    values = np.asarray(values)
    mean = values.mean(axis=0)
    var = values.var(axis=0, ddof=1)
    t = grid.times
    slope = float(np.polyfit(t, mean, 1)[0])
    return EnsembleStats(t, mean, var, runs, divergences, slope)
