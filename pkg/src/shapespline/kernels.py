"""Gaussian reproducing kernel, its derivatives and assembled block matrices.

The kernel is scalar-times-identity: K(z, z') = exp(-|z - z'|^2 / width^2) * I_d.
All landmark-space metrics and dynamics in this package are built from it.
Other C^2 kernels can be added by subclassing :class:`Kernel`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInputError


class Kernel:
    """Abstract scalar-times-identity kernel interface."""

    def scalar(self, sq_dist):
        """Scalar profile k(r^2) evaluated at squared distances."""
        raise NotImplementedError

    def scalar_d1(self, sq_dist):
        """Derivative of the profile with respect to the squared distance."""
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianKernel(Kernel):
    """Unit-amplitude Gaussian kernel of positive length scale ``width``."""

    width: float = 1.0

    def __post_init__(self):
        if not (self.width > 0.0 and math.isfinite(self.width)):
            raise ValueError(f"kernel width must be positive and finite, got {self.width}")

    def scalar(self, sq_dist):
        return np.exp(-np.asarray(sq_dist) / self.width**2)

    def scalar_d1(self, sq_dist):
        lam2 = self.width**2
        return -np.exp(-np.asarray(sq_dist) / lam2) / lam2


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteInputError("kernel input contains non-finite coordinates")


def eval_kernel(z, zp, kernel: GaussianKernel) -> np.ndarray:
    """Evaluate K(z, z') as a d x d matrix."""
    z = np.asarray(z, dtype=float)
    zp = np.asarray(zp, dtype=float)
    _check_finite(z, zp)
    diff = z - zp
    s = float(kernel.scalar(diff @ diff))
    return s * np.eye(z.size)


def kernel_scalar_matrix(x: np.ndarray, kernel: GaussianKernel, d: int) -> np.ndarray:
    """n x n matrix of scalar kernel values between the points of a configuration.

    Assembled from the upper triangle and mirrored, so the result is
    bit-for-bit symmetric.
    """
    pts = np.asarray(x, dtype=float).reshape(-1, d)
    _check_finite(pts)
    n = pts.shape[0]
    diff = pts[:, None, :] - pts[None, :, :]
    sq = np.einsum("ije,ije->ij", diff, diff)
    s = np.asarray(kernel.scalar(sq))
    upper = np.triu(s, k=1)
    return upper + upper.T + np.diag(np.diag(s))


def kernel_matrix(x: np.ndarray, kernel: GaussianKernel, d: int) -> np.ndarray:
    """Full (n*d) x (n*d) block kernel matrix, block (i, j) = K(x_i, x_j)."""
    s = kernel_scalar_matrix(x, kernel, d)
    return np.kron(s, np.eye(d))


def grad1_kernel(z, zp, kernel: GaussianKernel) -> np.ndarray:
    """Derivative of eval_kernel with respect to its first argument.

    Returns an array of shape (d, d, d) whose slice [c] is
    dK/dz_c = -(2 / width^2) (z - z')_c k(|z - z'|^2) * I_d.
    """
    z = np.asarray(z, dtype=float)
    zp = np.asarray(zp, dtype=float)
    _check_finite(z, zp)
    d = z.size
    diff = z - zp
    g = 2.0 * float(kernel.scalar_d1(diff @ diff)) * diff  # chain rule through |z-z'|^2
    return g[:, None, None] * np.eye(d)[None, :, :]


def hess12_kernel(z, zp, kernel: GaussianKernel) -> np.ndarray:
    """Mixed second derivative d^2 k / dz dz' of the scalar kernel profile.

    For the Gaussian of width w this is
    (2 / w^2) k I_d - (4 / w^4) k (z - z')(z - z')^T.
    """
    z = np.asarray(z, dtype=float)
    zp = np.asarray(zp, dtype=float)
    _check_finite(z, zp)
    w2 = kernel.width**2
    diff = z - zp
    k = float(kernel.scalar(diff @ diff))
    return (2.0 / w2) * k * np.eye(z.size) - (4.0 / w2**2) * k * np.outer(diff, diff)


def admissibility_constant(kernel: GaussianKernel) -> float:
    """Embedding constant C with |v|_{1,inf} <= C |v|_V for the unit Gaussian.

    Pointwise values are bounded by |v|_V (since k(z,z) = 1) and first
    derivatives by sqrt(2)/width (square root of the mixed second derivative
    at coincident points).
    """
    return max(1.0, math.sqrt(2.0) / kernel.width)
