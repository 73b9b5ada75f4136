"""Reduced Hamiltonian of the landmark system and phase-space integration.

State q = (x, p) with x the stacked landmark coordinates and p the stacked
momenta. The vector field is

    f(q, u) = ( dH0/dp(x, p), -dH0/dx(x, p) + u )

with H0(x, p) = 1/2 sum_ij <p_i, p_j> k(|x_i - x_j|^2). Controls are sampled
on a uniform grid and interpreted piecewise-linear in time; the integrator is
classical fixed-step RK4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, IntegrationDivergedError
from .kernels import GaussianKernel, kernel_scalar_matrix


@dataclass
class PhaseState:
    """Position/momentum pair, each a flat length n*d vector."""

    x: np.ndarray
    p: np.ndarray
    d: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.p = np.asarray(self.p, dtype=float).ravel()
        if self.x.size != self.p.size:
            raise ValueError("x and p must have equal length")
        if self.x.size % self.d != 0:
            raise ValueError("state length must be a multiple of the ambient dimension")

    @property
    def n(self) -> int:
        return self.x.size // self.d


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of N steps over [0, horizon]."""

    horizon: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def node_weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights attached to the grid nodes."""
        w = np.full(self.steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def nearest_node(self, t: float) -> int:
        j = int(round(t / self.dt))
        return min(max(j, 0), self.steps)


@dataclass
class ControlPath:
    """Control samples at grid nodes, shape (N+1, n*d), piecewise linear in time."""

    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.shape[0] != self.grid.steps + 1:
            raise ValueError("need one control sample per grid node")

    @classmethod
    def zero(cls, grid: TimeGrid, dim: int) -> "ControlPath":
        return cls(grid, np.zeros((grid.steps + 1, dim)))

    def energy(self) -> float:
        """Trapezoidal approximation of the L2 energy int |u|^2 dt."""
        sq = np.einsum("ji,ji->j", self.samples, self.samples)
        return float(self.grid.node_weights() @ sq)


@dataclass
class Trajectory:
    """Phase-space path sampled at the grid nodes.

    ``t0`` shifts the node times; extrapolated paths may start before zero.
    """

    grid: TimeGrid
    xs: np.ndarray  # (N+1, n*d)
    ps: np.ndarray  # (N+1, n*d)
    d: int = field(default=2)
    t0: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.grid.times

    def state(self, j: int) -> PhaseState:
        return PhaseState(self.xs[j].copy(), self.ps[j].copy(), self.d)


# ---------------------------------------------------------------------------
# Hamiltonian and derivatives (flat-array internals)


def _pairs(x: np.ndarray, d: int, kernel: GaussianKernel):
    pts = x.reshape(-1, d)
    diff = pts[:, None, :] - pts[None, :, :]
    sq = np.einsum("ije,ije->ij", diff, diff)
    return pts, diff, np.asarray(kernel.scalar(sq))


def h0_raw(x: np.ndarray, p: np.ndarray, d: int, kernel: GaussianKernel) -> float:
    _, _, s = _pairs(x, d, kernel)
    pm = p.reshape(-1, d)
    return 0.5 * float(np.einsum("ij,ie,je->", s, pm, pm))


def dh0_dp_raw(x: np.ndarray, p: np.ndarray, d: int, kernel: GaussianKernel) -> np.ndarray:
    _, _, s = _pairs(x, d, kernel)
    return (s @ p.reshape(-1, d)).ravel()


def dh0_dx_raw(x: np.ndarray, p: np.ndarray, d: int, kernel: GaussianKernel) -> np.ndarray:
    _, diff, s = _pairs(x, d, kernel)
    pm = p.reshape(-1, d)
    pp = pm @ pm.T
    c2 = 2.0 / kernel.width**2
    # d h0 / d x_a = -(2/w^2) sum_j s_aj <p_a, p_j> (x_a - x_j)
    return (-c2 * np.einsum("aj,aje->ae", s * pp, diff)).ravel()


def h0(q: PhaseState, kernel: GaussianKernel) -> float:
    """Reduced Hamiltonian 1/2 p^T K_x p (the kinetic energy)."""
    return h0_raw(q.x, q.p, q.d, kernel)


def dh0_dp(q: PhaseState, kernel: GaussianKernel) -> np.ndarray:
    """Gradient of h0 in the momentum: component i is sum_j K(x_i, x_j) p_j."""
    return dh0_dp_raw(q.x, q.p, q.d, kernel)


def dh0_dx(q: PhaseState, kernel: GaussianKernel) -> np.ndarray:
    """Exact gradient of h0 in the positions."""
    return dh0_dx_raw(q.x, q.p, q.d, kernel)


def vector_field(x, p, u, d, kernel):
    _, diff, s = _pairs(x, d, kernel)
    pm = p.reshape(-1, d)
    xdot = (s @ pm).ravel()
    c2 = 2.0 / kernel.width**2
    pdot = (c2 * np.einsum("aj,aje->ae", s * (pm @ pm.T), diff)).ravel() + u
    return xdot, pdot


def vector_field_batch(xs, ps, us, d, kernel):
    """f(q, u) for a batch of states; xs, ps, us have shape (B, n*d)."""
    batch = xs.shape[0]
    pts = xs.reshape(batch, -1, d)
    diff = pts[:, :, None, :] - pts[:, None, :, :]
    sq = np.einsum("zije,zije->zij", diff, diff)
    s = np.asarray(kernel.scalar(sq))
    pm = ps.reshape(batch, -1, d)
    xdot = np.einsum("zij,zje->zie", s, pm).reshape(batch, -1)
    c2 = 2.0 / kernel.width**2
    spp = s * np.einsum("zie,zje->zij", pm, pm)
    pdot = c2 * np.einsum("zaj,zaje->zae", spp, diff).reshape(batch, -1) + us
    return xdot, pdot


def phase_jacobian_batch(xs: np.ndarray, ps: np.ndarray, d: int,
                         kernel: GaussianKernel) -> np.ndarray:
    """Jacobians of f(q, u) in q for a batch of states, shape (B, 2nd, 2nd).

    Each jacobian is [[G, K], [-B, -G^T]] with G = d(dh0/dp)/dx, K the kernel
    block matrix and B = d(dh0/dx)/dx; the lower right block is -G^T by
    symmetry of mixed partials.
    """
    batch = xs.shape[0]
    pts = xs.reshape(batch, -1, d)
    n = pts.shape[1]
    nd = n * d
    diff = pts[:, :, None, :] - pts[:, None, :, :]
    sq = np.einsum("zije,zije->zij", diff, diff)
    s = np.asarray(kernel.scalar(sq))
    pm = ps.reshape(batch, n, d)
    pp = np.einsum("zie,zje->zij", pm, pm)
    c2 = 2.0 / kernel.width**2
    eye = np.eye(d)
    ar = np.arange(n)

    kmat = np.einsum("zab,ef->zaebf", s, eye).reshape(batch, nd, nd)

    # G[a, b, c, e] = d (dh0/dp)_{a,c} / d x_{b,e}
    goff = c2 * np.einsum("zab,zabe,zbc->zabce", s, diff, pm)
    gdiag = -goff.sum(axis=2)
    goff[:, ar, ar] = gdiag
    gmat = goff.transpose(0, 1, 3, 2, 4).reshape(batch, nd, nd)

    # B off-diagonal blocks: -(2/w^2) <p_a,p_b> s_ab ((2/w^2) dd^T - I)
    spp = s * pp
    boff = -(c2 * c2) * np.einsum("zab,zabe,zabf->zabef", spp, diff, diff)
    boff += c2 * spp[:, :, :, None, None] * eye[None, None, None, :, :]
    boff[:, ar, ar] = 0.0
    boff[:, ar, ar] = -boff.sum(axis=2)
    bmat = boff.transpose(0, 1, 3, 2, 4).reshape(batch, nd, nd)

    out = np.empty((batch, 2 * nd, 2 * nd))
    out[:, :nd, :nd] = gmat
    out[:, :nd, nd:] = kmat
    out[:, nd:, :nd] = -bmat
    out[:, nd:, nd:] = -gmat.transpose(0, 2, 1)
    return out


def phase_jacobian(x: np.ndarray, p: np.ndarray, d: int, kernel: GaussianKernel) -> np.ndarray:
    """Jacobian of f(q, u) in q, a (2nd) x (2nd) matrix [[G, K], [-B, -G^T]]."""
    return phase_jacobian_batch(x[None, :], p[None, :], d, kernel)[0]


# ---------------------------------------------------------------------------
# RK4 stepping


def _rk4_stages(x, p, u0, um, u1, dt, d, kernel):
    """Stage states and slopes of one classical RK4 step.

    u0, um, u1 are the control at the step start, midpoint and end.
    Returns (stage_states, stage_slopes) with 4 entries each; stage states
    are (x, p) pairs.
    """
    k1 = vector_field(x, p, u0, d, kernel)
    x2, p2 = x + 0.5 * dt * k1[0], p + 0.5 * dt * k1[1]
    k2 = vector_field(x2, p2, um, d, kernel)
    x3, p3 = x + 0.5 * dt * k2[0], p + 0.5 * dt * k2[1]
    k3 = vector_field(x3, p3, um, d, kernel)
    x4, p4 = x + dt * k3[0], p + dt * k3[1]
    k4 = vector_field(x4, p4, u1, d, kernel)
    states = [(x, p), (x2, p2), (x3, p3), (x4, p4)]
    return states, [k1, k2, k3, k4]


def rk4_step(x, p, u0, um, u1, dt, d, kernel):
    _, ks = _rk4_stages(x, p, u0, um, u1, dt, d, kernel)
    xn = x + dt / 6.0 * (ks[0][0] + 2 * ks[1][0] + 2 * ks[2][0] + ks[3][0])
    pn = p + dt / 6.0 * (ks[0][1] + 2 * ks[1][1] + 2 * ks[2][1] + ks[3][1])
    return xn, pn


def integrate_controlled(q0: PhaseState, u: ControlPath, kernel: GaussianKernel) -> Trajectory:
    """Integrate the controlled system with RK4 on the control's grid.

    The control is evaluated at stage midpoints by linear interpolation.
    Raises IntegrationDivergedError carrying the failing node index if the
    state becomes non-finite.
    """
    grid = u.grid
    nd = q0.x.size
    if u.samples.shape[1] != nd:
        raise GridMismatchError("control sample dimension does not match the state")
    dt = grid.dt
    xs = np.empty((grid.steps + 1, nd))
    ps = np.empty((grid.steps + 1, nd))
    xs[0], ps[0] = q0.x, q0.p
    for j in range(grid.steps):
        u0, u1 = u.samples[j], u.samples[j + 1]
        um = 0.5 * (u0 + u1)
        xs[j + 1], ps[j + 1] = rk4_step(xs[j], ps[j], u0, um, u1, dt, q0.d, kernel)
        if not (np.all(np.isfinite(xs[j + 1])) and np.all(np.isfinite(ps[j + 1]))):
            raise IntegrationDivergedError(j + 1)
    return Trajectory(grid, xs, ps, q0.d)


def integrate_geodesic(q0: PhaseState, grid: TimeGrid, kernel: GaussianKernel) -> Trajectory:
    """Geodesic flow: the controlled system with u identically zero."""
    return integrate_controlled(q0, ControlPath.zero(grid, q0.x.size), kernel)


def reconstruct_velocity(q: PhaseState, z, kernel: GaussianKernel) -> np.ndarray:
    """Ambient velocity field v(z) = sum_i K(z, x_i) p_i."""
    z = np.asarray(z, dtype=float)
    pts = q.x.reshape(-1, q.d)
    diff = z[None, :] - pts
    s = np.asarray(kernel.scalar(np.einsum("ie,ie->i", diff, diff)))
    return s @ q.p.reshape(-1, q.d)


def covariant_acceleration(traj: Trajectory, u: ControlPath, kernel: GaussianKernel) -> np.ndarray:
    """Covariant acceleration K_{x_t} u_t at each node, shape (N+1, n*d)."""
    if u.samples.shape != traj.xs.shape:
        raise GridMismatchError("control and trajectory shapes differ")
    out = np.empty_like(u.samples)
    for j in range(traj.xs.shape[0]):
        s = kernel_scalar_matrix(traj.xs[j], kernel, traj.d)
        out[j] = (s @ u.samples[j].reshape(-1, traj.d)).ravel()
    return out
