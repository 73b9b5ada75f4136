"""Timestamped landmark observations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .dynamics import TimeGrid


@dataclass
class ObservationSet:
    """M timestamped configurations (t_k, x^D_k), times strictly increasing."""

    times: np.ndarray  # (M,)
    configs: np.ndarray  # (M, n*d)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.configs = np.atleast_2d(np.asarray(self.configs, dtype=float))
        if self.times.size != self.configs.shape[0]:
            raise ConfigurationError("one configuration per observation time required")
        if self.times.size == 0:
            raise ConfigurationError("at least one observation is required")
        if np.any(np.diff(self.times) <= 0.0):
            raise ConfigurationError("observation times must be strictly increasing")
        if self.times[0] < 0.0:
            raise ConfigurationError("observation times must be non-negative")
        if not np.all(np.isfinite(self.configs)):
            raise ConfigurationError("observation coordinates must be finite")

    def __len__(self) -> int:
        return self.times.size

    def node_indices(self, grid: TimeGrid) -> np.ndarray:
        """Snap each observation time to its nearest grid node.

        Times beyond the horizon (up to roundoff) are rejected. Snapping to
        the nearest node keeps every data-attachment jump exactly on a node.
        """
        if self.times[-1] > grid.horizon * (1.0 + 1e-12) + 1e-12:
            raise ConfigurationError(
                f"observation time {self.times[-1]} exceeds the horizon {grid.horizon}"
            )
        nodes = np.array([grid.nearest_node(t) for t in self.times])
        if np.any(np.diff(nodes) <= 0):
            raise ConfigurationError("observation times collide after grid snapping; refine the grid")
        return nodes
