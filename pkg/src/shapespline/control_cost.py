"""Running control cost C(q, u) = weight * 1/2 <M(x) u, u> for three metrics.

Variants:
  * ``euclidean``  - M = identity (white-noise prior on the control).
  * ``dualkernel`` - M = K_x, the block kernel matrix (bending energy).
  * ``measure``    - M = (G(x) + jitter I)^{-1} with
    G(x) = (1/n^2) (d^2 K_W / dx_i dx_j (x_i, x_j))_{ij}, the metric induced
    by representing the landmarks as an empirical measure in the dual of the
    RKHS of a scalar Gaussian kernel K_W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import MetricDegenerateError
from .kernels import GaussianKernel, kernel_matrix

EUCLIDEAN = "euclidean"
DUALKERNEL = "dualkernel"
MEASURE = "measure"
_VARIANTS = (EUCLIDEAN, DUALKERNEL, MEASURE)


@dataclass(frozen=True)
class ControlMetric:
    """Choice of control metric plus the overall positive weight sigma_u."""

    variant: str = EUCLIDEAN
    weight: float = 1.0
    measure_width: float = 1.0  # width of K_W, measure variant only
    jitter_scale: float = 1e-9  # Tikhonov jitter relative to trace(G)/(n d)

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown metric variant {self.variant!r}")
        if not self.weight > 0.0:
            raise ValueError("metric weight must be positive")
        if self.variant == MEASURE:
            if not self.measure_width > 0.0:
                raise ValueError("measure kernel width must be positive")
            if not self.jitter_scale > 0.0:
                raise ValueError("measure jitter must be positive")


def measure_gram(x: np.ndarray, metric: ControlMetric, d: int) -> np.ndarray:
    """G(x): mixed second derivatives of K_W between all landmark pairs, /n^2."""
    pts = np.asarray(x, dtype=float).reshape(-1, d)
    n = pts.shape[0]
    w2 = metric.measure_width**2
    diff = pts[:, None, :] - pts[None, :, :]
    sq = np.einsum("ije,ije->ij", diff, diff)
    k = np.exp(-sq / w2)
    blocks = (2.0 / w2) * k[:, :, None, None] * np.eye(d)[None, None, :, :]
    blocks -= (4.0 / w2**2) * np.einsum("ij,ije,ijf->ijef", k, diff, diff)
    return blocks.transpose(0, 2, 1, 3).reshape(n * d, n * d) / n**2


def _measure_cho(x: np.ndarray, metric: ControlMetric, d: int):
    g = measure_gram(x, metric, d)
    nd = g.shape[0]
    jitter = metric.jitter_scale * np.trace(g) / nd
    try:
        return scipy.linalg.cho_factor(g + jitter * np.eye(nd))
    except scipy.linalg.LinAlgError as exc:
        raise MetricDegenerateError(f"measure metric factorization failed: {exc}") from None


def metric_apply(x: np.ndarray, u: np.ndarray, metric: ControlMetric, kernel: GaussianKernel, d: int) -> np.ndarray:
    """M(x) u without forming an explicit inverse for the measure variant."""
    if metric.variant == EUCLIDEAN:
        return np.asarray(u, dtype=float).copy()
    if metric.variant == DUALKERNEL:
        return kernel_matrix(x, kernel, d) @ u
    return scipy.linalg.cho_solve(_measure_cho(x, metric, d), u)


def metric_matrix(x: np.ndarray, metric: ControlMetric, kernel: GaussianKernel, d: int) -> np.ndarray:
    """Dense (n*d) x (n*d) metric matrix M(x). Symmetric positive definite.

    For the measure variant the inverse Gram matrix is realized through a
    Cholesky solve against the identity; hot paths use :func:`metric_apply`.
    """
    nd = np.asarray(x).size
    if metric.variant == EUCLIDEAN:
        return np.eye(nd)
    if metric.variant == DUALKERNEL:
        return kernel_matrix(x, kernel, d)
    m = scipy.linalg.cho_solve(_measure_cho(x, metric, d), np.eye(nd))
    return 0.5 * (m + m.T)


def cost_raw(x: np.ndarray, u: np.ndarray, metric: ControlMetric, kernel: GaussianKernel, d: int) -> float:
    return 0.5 * metric.weight * float(u @ metric_apply(x, u, metric, kernel, d))


def cost(q, u: np.ndarray, metric: ControlMetric, kernel: GaussianKernel) -> float:
    """Running cost weight * 1/2 u^T M(x) u at a phase state."""
    return cost_raw(q.x, np.asarray(u, dtype=float), metric, kernel, q.d)


def cost_grad_u_raw(x, u, metric, kernel, d) -> np.ndarray:
    return metric.weight * metric_apply(x, u, metric, kernel, d)


def cost_grad_u(q, u, metric: ControlMetric, kernel: GaussianKernel) -> np.ndarray:
    """Exact gradient of the cost in u: weight * M(x) u."""
    return cost_grad_u_raw(q.x, np.asarray(u, dtype=float), metric, kernel, q.d)


def cost_grad_x_raw(x, u, metric: ControlMetric, kernel: GaussianKernel, d: int) -> np.ndarray:
    """Gradient of the cost in the positions (state-dependent variants only).

    DualKernel is assembled from the kernel spatial gradient; the measure
    variant falls back to central finite differences of the factorized solve
    with step 1e-6 * (1 + |x|).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if metric.variant == EUCLIDEAN:
        return np.zeros_like(x)
    if metric.variant == DUALKERNEL:
        pts = x.reshape(-1, d)
        um = u.reshape(-1, d)
        diff = pts[:, None, :] - pts[None, :, :]
        sq = np.einsum("ije,ije->ij", diff, diff)
        s = np.asarray(kernel.scalar(sq))
        uu = um @ um.T
        c2 = 2.0 / kernel.width**2
        grad = -metric.weight * c2 * np.einsum("aj,aje->ae", s * uu, diff)
        return grad.ravel()
    step = 1e-6 * (1.0 + float(np.linalg.norm(x)))
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        grad[i] = (cost_raw(xp, u, metric, kernel, d) - cost_raw(xm, u, metric, kernel, d)) / (2 * step)
    return grad


def cost_grad_q(q, u, metric: ControlMetric, kernel: GaussianKernel) -> np.ndarray:
    """Gradient of the cost in q = (x, p); the p-half is identically zero."""
    gx = cost_grad_x_raw(q.x, np.asarray(u, dtype=float), metric, kernel, q.d)
    return np.concatenate([gx, np.zeros_like(gx)])
