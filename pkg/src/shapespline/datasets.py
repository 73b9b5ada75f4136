"""Dataset files, experiment configuration and result emission (CSV/SVG).

Datasets are single JSON documents: landmark count, ambient dimension, a list
of timestamped observations, and an optional dense ground-truth block with
the same schema. Numeric outputs are CSV; plots are hand-rolled static SVG.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .errors import ValidationError
from .observations import ObservationSet

# ---------------------------------------------------------------------------
# Dataset files


@dataclass
class TimedBlock:
    """Times plus one flattened (n*d) configuration row per time."""

    times: np.ndarray
    configs: np.ndarray


@dataclass
class DatasetFile:
    """In-memory form of a dataset JSON document."""

    dimension: int
    landmarks: int
    observations: TimedBlock
    ground_truth: TimedBlock | None = None

    def observation_set(self) -> ObservationSet:
        return ObservationSet(self.observations.times, self.observations.configs)

    def to_json(self) -> dict:
        def block(b: TimedBlock):
            return [
                {"time": float(t), "points": np.asarray(c).reshape(-1, self.dimension).tolist()}
                for t, c in zip(b.times, b.configs)
            ]

        doc = {
            "dimension": self.dimension,
            "landmarks": self.landmarks,
            "observations": block(self.observations),
        }
        if self.ground_truth is not None:
            doc["ground_truth"] = block(self.ground_truth)
        return doc

    @classmethod
    def from_json(cls, doc) -> "DatasetFile":
        if not isinstance(doc, dict):
            raise ValidationError("dataset document must be a JSON object")
        d = _require_int(doc, "dimension", minimum=1)
        n = _require_int(doc, "landmarks", minimum=1)
        obs = _parse_block(doc, "observations", n, d, required=True)
        truth = None
        if doc.get("ground_truth") is not None:
            truth = _parse_block(doc, "ground_truth", n, d, required=False)
        unknown = set(doc) - {"dimension", "landmarks", "observations", "ground_truth"}
        if unknown:
            raise ValidationError(f"unknown fields {sorted(unknown)}")
        return cls(d, n, obs, truth)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetFile":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"not valid JSON: {exc}") from None
        return cls.from_json(doc)


def _require_int(doc, key, minimum):
    value = doc.get(key)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ValidationError(f"must be an integer >= {minimum}", key)
    return value


def _parse_block(doc, key, n, d, required) -> TimedBlock:
    entries = doc.get(key)
    if not isinstance(entries, list) or (required and not entries):
        raise ValidationError("must be a non-empty list", key)
    times = []
    configs = []
    for i, entry in enumerate(entries):
        where = f"{key}[{i}]"
        if not isinstance(entry, dict):
            raise ValidationError("must be an object", where)
        t = entry.get("time")
        if not isinstance(t, (int, float)) or isinstance(t, bool) or not np.isfinite(t):
            raise ValidationError("time must be a finite number", f"{where}.time")
        try:
            pts = np.asarray(entry.get("points"), dtype=float)
        except (TypeError, ValueError):
            raise ValidationError("points must be a numeric array", f"{where}.points") from None
        if pts.shape != (n, d):
            raise ValidationError(f"points must have shape ({n}, {d}), got {pts.shape}",
                                  f"{where}.points")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("points must be finite", f"{where}.points")
        times.append(float(t))
        configs.append(pts.ravel())
    times = np.asarray(times)
    if np.any(np.diff(times) <= 0.0):
        raise ValidationError("times must be strictly increasing", key)
    if times[0] < 0.0:
        raise ValidationError("times must be non-negative", key)
    return TimedBlock(times, np.asarray(configs))


# ---------------------------------------------------------------------------
# Experiment configuration


@dataclass
class ExperimentConfig:
    """Tunable experiment knobs, loadable from a JSON config file."""

    kernel_width: float = 1.0
    metric: str = "euclidean"
    metric_weight: float = 1.0
    measure_width: float = 1.0
    gamma: float = 100.0
    grid_steps: int | None = None
    horizon: float | None = None
    optimizer: str = "lbfgs"
    max_iter: int = 2000
    grad_tol: float = 1e-9
    noise_sigma: float = 0.0
    seed: int = 0
    out_dir: str = "."

    _FIELDS = ("kernel_width", "metric", "metric_weight", "measure_width", "gamma",
               "grid_steps", "horizon", "optimizer", "max_iter", "grad_tol",
               "noise_sigma", "seed", "out_dir")

    def __post_init__(self):
        for name in ("kernel_width", "metric_weight", "measure_width", "gamma"):
            if not getattr(self, name) > 0.0:
                raise ValidationError("must be positive", name)
        if self.metric not in ("euclidean", "dualkernel", "measure"):
            raise ValidationError("must be euclidean, dualkernel or measure", "metric")
        if self.grid_steps is not None and self.grid_steps < 1:
            raise ValidationError("must be >= 1", "grid_steps")
        if self.horizon is not None and not self.horizon > 0.0:
            raise ValidationError("must be positive", "horizon")
        if self.noise_sigma < 0.0:
            raise ValidationError("must be >= 0", "noise_sigma")

    @classmethod
    def from_json(cls, doc) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ValidationError("config document must be a JSON object")
        unknown = set(doc) - set(cls._FIELDS)
        if unknown:
            raise ValidationError(f"unknown fields {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ValidationError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"not valid JSON: {exc}") from None
        return cls.from_json(doc)


# ---------------------------------------------------------------------------
# Synthetic datasets


def _circle(n: int) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(n) / n
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def _pinched_shape(n: int) -> np.ndarray:
    """A horizontally pinched ellipse: y is squeezed near the x extremes."""
    pts = _circle(n) * np.array([1.15, 0.95])
    pinch = 1.0 - 0.65 * np.exp(-(pts[:, 1] / 0.45) ** 2)
    return np.stack([pts[:, 0] * pinch, pts[:, 1]], axis=1)


def pinched_ellipse_truth(n: int, times) -> np.ndarray:
    """Clean circle-to-pinched-ellipse positions at the requested times.

    Linear morph from the unit circle to the pinched shape with an overall
    rescale growing linearly from 1.0 to 1.3 across [0, t_end].
    """
    times = np.asarray(times, dtype=float)
    t_end = times[-1]
    circle = _circle(n)
    target = _pinched_shape(n)
    out = np.empty((times.size, n * 2))
    for i, t in enumerate(times):
        s = t / t_end
        r = 1.0 + 0.3 * s
        out[i] = (r * ((1.0 - s) * circle + s * target)).ravel()
    return out


def synth_circle_to_pinched_ellipse(n: int, m: int = 5, noise_sigma: float = 0.0,
                                    seed: int = 0, t_end: float = 3.8,
                                    dense_steps: int | None = None) -> DatasetFile:
    """Circle morphing into a growing, horizontally pinched ellipse.

    M observation times are uniform with t_M = t_end; i.i.d. Gaussian noise
    of standard deviation noise_sigma is added to every observed coordinate.
    The clean morph is emitted as ground truth on a dense uniform grid when
    dense_steps is given.
    """
    if n < 3 or m < 2:
        raise ValidationError("need n >= 3 landmarks and m >= 2 observation times")
    obs_times = t_end * np.arange(1, m + 1) / m
    configs = pinched_ellipse_truth(n, np.concatenate([[0.0], obs_times]))[1:]
    rng = np.random.Generator(np.random.PCG64(seed))
    configs = configs + noise_sigma * rng.standard_normal(configs.shape)
    truth = None
    if dense_steps is not None:
        dense_times = np.linspace(0.0, t_end, dense_steps + 1)
        truth = TimedBlock(dense_times, pinched_ellipse_truth(n, dense_times))
    return DatasetFile(2, n, TimedBlock(obs_times, configs), truth)


def _quartic_ramp(s: np.ndarray) -> np.ndarray:
    # 0 -> 1 ramp with zero velocity at the start and zero curvature at both
    # ends; its low fourth derivative keeps smooth interpolants accurate even
    # with very few knots
    return s**3 * (2.0 - s)


def _quintic_ramp(s: np.ndarray) -> np.ndarray:
    # 0 -> 1 ramp with zero velocity and zero curvature at both ends
    return s**3 * (10.0 + s * (6.0 * s - 15.0))


def rotating_ellipse_truth(n: int, times, t_end: float) -> np.ndarray:
    """Circle deforming into a rotated ellipse, smoothly ramped in time.

    x_i(t) = R(theta(t)) diag(a(t), b(t)) (cos theta_i, sin theta_i). The axes
    follow the quartic ramp (zero curvature at both ends, small fourth
    derivative). The angle follows the quintic ramp, whose vanishing endpoint
    velocity also kills the centripetal theta'^2 term in the acceleration, so
    the whole path starts and ends with zero acceleration.
    """
    times = np.asarray(times, dtype=float)
    circle = _circle(n)
    out = np.empty((times.size, n * 2))
    for i, t in enumerate(times):
        tau = np.asarray(t / t_end)
        s = _quartic_ramp(tau)
        a, b = 1.0 + 0.35 * s, 1.0 - 0.25 * s
        ang = (np.pi / 16.0) * t_end * _quintic_ramp(tau)
        rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        out[i] = (circle * np.array([a, b]) @ rot.T).ravel()
    return out


def synth_circle_to_rotating_ellipse(n: int, dense_steps: int, m: int,
                                     t_end: float = 2.0) -> DatasetFile:
    """Rotating-ellipse family with dense ground truth and M subsamples."""
    if n < 3 or m < 2 or dense_steps < m:
        raise ValidationError("need n >= 3, m >= 2 and dense_steps >= m")
    dense_times = np.linspace(0.0, t_end, dense_steps + 1)
    truth = rotating_ellipse_truth(n, dense_times, t_end)
    nodes = np.unique(np.round(np.linspace(0, dense_steps, m)).astype(int))[1:]
    return DatasetFile(
        2, n,
        TimedBlock(dense_times[nodes], truth[nodes]),
        TimedBlock(dense_times, truth),
    )


# ---------------------------------------------------------------------------
# Result emission


def write_trajectory_csv(path, traj: Trajectory, u_samples: np.ndarray | None = None) -> None:
    """Columns: t, x_{i,j}, p_{i,j}, u_{i,j} (u zero when no control given)."""
    nd = traj.xs.shape[1]
    n, d = nd // traj.d, traj.d
    if u_samples is None:
        u_samples = np.zeros_like(traj.xs)
    names = [f"{var}_{i + 1}_{j + 1}" for var in ("x", "p", "u")
             for i in range(n) for j in range(d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + names)
        for row in range(traj.xs.shape[0]):
            values = np.concatenate([traj.xs[row], traj.ps[row], u_samples[row]])
            writer.writerow([f"{traj.times[row]:.12g}"] + [f"{v:.17g}" for v in values])


def write_ensemble_csv(path, stats) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mean_H0", "var_H0"])
        for t, m, v in zip(stats.times, stats.mean_h0, stats.var_h0):
            writer.writerow([f"{t:.12g}", f"{m:.17g}", f"{v:.17g}"])


def write_study_csv(path, rows) -> None:
    """Convergence-study table: method, M, E, runtime_seconds."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "M", "E", "runtime_seconds"])
        for r in rows:
            err = "nan" if r.error is None else f"{r.error:.17g}"
            writer.writerow([r.method, r.observations, err, f"{r.runtime_seconds:.6g}"])


def _color(fraction: float) -> str:
    # blue (small) to red (large)
    f = min(max(fraction, 0.0), 1.0)
    return f"rgb({int(255 * f)},60,{int(255 * (1 - f))})"


def write_svg(path, traj: Trajectory, u_samples: np.ndarray | None = None,
              size: int = 640) -> None:
    """Space-time plot: one polyline per landmark, colored by the control norm.

    Each segment's stroke encodes ||u_i(t)|| relative to the path maximum;
    the first and last shapes are drawn as grey outlines for orientation.
    """
    d = traj.d
    pts = traj.xs.reshape(traj.xs.shape[0], -1, d)[:, :, :2]
    n = pts.shape[1]
    if u_samples is None:
        u_samples = np.zeros_like(traj.xs)
    unorm = np.linalg.norm(u_samples.reshape(u_samples.shape[0], -1, d), axis=2)
    umax = float(unorm.max()) or 1.0

    lo = pts.reshape(-1, 2).min(axis=0)
    hi = pts.reshape(-1, 2).max(axis=0)
    span = float(max(hi - lo)) or 1.0
    pad = 0.05 * span

    def map_xy(xy):
        sx = (xy[0] - lo[0] + pad) / (span + 2 * pad) * size
        sy = size - (xy[1] - lo[1] + pad) / (span + 2 * pad) * size
        return sx, sy

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for row, colour in ((0, "#999999"), (pts.shape[0] - 1, "#444444")):
        ring = " ".join(f"{sx:.2f},{sy:.2f}" for sx, sy in map(map_xy, pts[row]))
        parts.append(f'<polygon points="{ring}" fill="none" stroke="{colour}" '
                     'stroke-width="1" stroke-dasharray="4 3"/>')
    for i in range(n):
        for j in range(pts.shape[0] - 1):
            (x1, y1), (x2, y2) = map_xy(pts[j, i]), map_xy(pts[j + 1, i])
            col = _color(0.5 * (unorm[j, i] + unorm[j + 1, i]) / umax)
            parts.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                         f'stroke="{col}" stroke-width="1.2"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
