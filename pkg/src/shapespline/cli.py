"""Command-line front end.

Subcommands: synth, fit, baseline, simulate, kunita, montecarlo, convergence,
extrapolate. Every command writes machine-readable outputs (CSV tables plus a
summary JSON) into --out, and is deterministic given (config, dataset, seed).

Exit codes: 0 success, 2 validation/configuration failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .baseline import convergence_study, fit_piecewise_geodesic, l2_error
from .control_cost import ControlMetric
from .datasets import (DatasetFile, ExperimentConfig, synth_circle_to_pinched_ellipse,
                       synth_circle_to_rotating_ellipse, write_ensemble_csv,
                       write_study_csv, write_svg, write_trajectory_csv)
from .dynamics import PhaseState, TimeGrid, h0
from .errors import (ConfigurationError, DegenerateConfigurationError,
                     IntegrationDivergedError, MetricDegenerateError, ValidationError)
from .estimator import OptimizerSettings, SplineProblem, extrapolate, fit
from .kernels import GaussianKernel
from .stochastic import GaussianStream, NoiseSpec, monte_carlo_hamiltonian, simulate_kunita, simulate_sde


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapespline",
        description="Second-order spline interpolation and stochastic simulation "
        "of landmark shape evolutions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False):
        p.add_argument("--config", type=Path, help="experiment config JSON")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--seed", type=int, help="random seed (overrides config)")
        p.add_argument("--gamma", type=float, help="data-attachment weight")
        p.add_argument("--lambda", dest="kernel_width", type=float, help="kernel width")
        p.add_argument("--metric", choices=["euclidean", "dualkernel", "measure"])
        p.add_argument("--grid-steps", type=int, help="number of time steps")
        p.add_argument("--svg", action="store_true", help="also write an SVG plot")
        if dataset:
            p.add_argument("--dataset", type=Path, required=True, help="dataset JSON")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--family", choices=["pinched", "rotating"], default="pinched")
    p.add_argument("--n", type=int, default=40, help="number of landmarks")
    p.add_argument("--m", type=int, default=5, help="number of observation times")
    p.add_argument("--noise", type=float, default=0.0, help="observation noise sigma")
    p.add_argument("--dense-steps", type=int, help="emit dense ground truth on this grid")

    p = sub.add_parser("fit", help="fit the second-order spline to a dataset")
    common(p, dataset=True)

    p = sub.add_parser("baseline", help="fit the piecewise-geodesic baseline")
    common(p, dataset=True)

    p = sub.add_parser("extrapolate", help="fit, then extend geodesically past the data")
    common(p, dataset=True)
    p.add_argument("--t-end", type=float, required=True, help="extrapolation end time")

    p = sub.add_parser("simulate", help="one noisy second-order simulation")
    common(p)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--eps-scaled", type=float, default=0.0,
                   help="noise amplitude sqrt(n)*eps")
    p.add_argument("--horizon", type=float, default=1.0)

    p = sub.add_parser("kunita", help="first-order kernel-correlated flow")
    common(p)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--sigma", type=float, default=0.1, help="flow amplitude")
    p.add_argument("--horizon", type=float, default=1.0)

    p = sub.add_parser("montecarlo", help="Monte Carlo Hamiltonian-drift study")
    common(p)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--eps-scaled", type=float, default=1.0)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--runs", type=int, default=200)

    p = sub.add_parser("convergence", help="error-vs-M study against ground truth")
    common(p, dataset=True)
    p.add_argument("--methods", default="spline,piecewise",
                   help="comma-separated subset of {spline, piecewise}")
    p.add_argument("--M", default="3,5,7,9,11", help="comma-separated observation counts")

    return parser


def _resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for flag, name in (("gamma", "gamma"), ("kernel_width", "kernel_width"),
                       ("metric", "metric"), ("grid_steps", "grid_steps"),
                       ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    overrides["out_dir"] = str(args.out)
    return dataclasses.replace(cfg, **overrides)


def _problem(dataset: DatasetFile, cfg: ExperimentConfig) -> SplineProblem:
    obs = dataset.observation_set()
    grid = None
    if cfg.grid_steps is not None:
        grid = TimeGrid(cfg.horizon if cfg.horizon is not None else float(obs.times[-1]),
                        cfg.grid_steps)
    truth = dataset.ground_truth
    if truth is not None:
        x0 = truth.configs[0]
    else:
        # no template in the file: anchor the path at the first observation
        x0 = dataset.observations.configs[0]
    metric = ControlMetric(cfg.metric, cfg.metric_weight, cfg.measure_width)
    settings = OptimizerSettings(method=cfg.optimizer, max_iter=cfg.max_iter,
                                 grad_tol=cfg.grad_tol)
    return SplineProblem(x0, dataset.dimension, obs, GaussianKernel(cfg.kernel_width),
                         metric=metric, gamma=cfg.gamma, grid=grid, settings=settings)


def _write_summary(out: Path, payload: dict) -> None:
    (out / "summary.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _maybe_truth_error(dataset: DatasetFile, traj) -> float | None:
    truth = dataset.ground_truth
    if truth is None or truth.times.size != traj.times.size:
        return None
    if not np.allclose(truth.times, traj.times, atol=1e-9 * max(1.0, traj.grid.horizon)):
        return None
    return l2_error(traj, truth.configs)


def _circle_state(n: int, seed: int, kernel: GaussianKernel) -> PhaseState:
    theta = 2.0 * np.pi * np.arange(n) / n
    x0 = np.stack([np.cos(theta), np.sin(theta)], axis=1).ravel()
    p0 = GaussianStream(seed).normals(2 * n)
    energy = h0(PhaseState(x0, p0, 2), kernel)
    # h0 is quadratic in p, so rescaling by 1/sqrt(h0) normalizes to h0 = 1
    return PhaseState(x0, p0 / np.sqrt(energy), 2)


def cmd_synth(args, cfg: ExperimentConfig) -> dict:
    seed = cfg.seed
    if args.family == "pinched":
        data = synth_circle_to_pinched_ellipse(args.n, args.m, args.noise, seed,
                                               dense_steps=args.dense_steps)
    else:
        dense = args.dense_steps if args.dense_steps is not None else 400
        data = synth_circle_to_rotating_ellipse(args.n, dense, args.m)
    path = args.out / "dataset.json"
    data.save(path)
    return {"dataset": str(path), "family": args.family,
            "landmarks": args.n, "observations": args.m}


def cmd_fit(args, cfg: ExperimentConfig) -> dict:
    dataset = DatasetFile.load(args.dataset)
    prob = _problem(dataset, cfg)
    sol = fit(prob)
    write_trajectory_csv(args.out / "trajectory.csv", sol.traj, sol.u.samples)
    if args.svg:
        write_svg(args.out / "trajectory.svg", sol.traj, sol.u.samples)
    summary = {
        "objective": sol.objective,
        "residuals": sol.residuals.tolist(),
        "iterations": sol.iterations,
        "converged": sol.converged,
        "reason": sol.reason,
        "euler_lagrange_residual": sol.stationarity,
        "control_energy": sol.u.energy(),
    }
    err = _maybe_truth_error(dataset, sol.traj)
    if err is not None:
        summary["l2_error_vs_truth"] = err
    _write_summary(args.out, summary)
    return summary


def cmd_baseline(args, cfg: ExperimentConfig) -> dict:
    dataset = DatasetFile.load(args.dataset)
    prob = _problem(dataset, cfg)
    sol = fit_piecewise_geodesic(prob)
    write_trajectory_csv(args.out / "trajectory.csv", sol.traj)
    if args.svg:
        write_svg(args.out / "trajectory.svg", sol.traj)
    summary = {
        "objective": sol.objective,
        "residuals": sol.residuals.tolist(),
        "kinetic_energy": sol.kinetic_energy,
        "converged": sol.converged,
        "reason": sol.reason,
    }
    err = _maybe_truth_error(dataset, sol.traj)
    if err is not None:
        summary["l2_error_vs_truth"] = err
    _write_summary(args.out, summary)
    return summary


def cmd_extrapolate(args, cfg: ExperimentConfig) -> dict:
    dataset = DatasetFile.load(args.dataset)
    prob = _problem(dataset, cfg)
    sol = fit(prob)
    extended = extrapolate(sol, args.t_end, prob)
    pad = extended.xs.shape[0] - sol.u.samples.shape[0]
    u_ext = np.vstack([sol.u.samples, np.zeros((pad, sol.u.samples.shape[1]))])
    write_trajectory_csv(args.out / "trajectory.csv", extended, u_ext)
    if args.svg:
        write_svg(args.out / "trajectory.svg", extended, u_ext)
    summary = {"objective": sol.objective, "residuals": sol.residuals.tolist(),
               "iterations": sol.iterations, "converged": sol.converged,
               "reason": sol.reason, "euler_lagrange_residual": sol.stationarity,
               "fit_horizon": sol.traj.grid.horizon, "extended_horizon": extended.grid.horizon}
    _write_summary(args.out, summary)
    return summary


def _sim_grid(cfg: ExperimentConfig, horizon: float) -> TimeGrid:
    steps = cfg.grid_steps if cfg.grid_steps is not None else 1000
    return TimeGrid(horizon, steps)


def cmd_simulate(args, cfg: ExperimentConfig) -> dict:
    kernel = GaussianKernel(cfg.kernel_width)
    q0 = _circle_state(args.n, cfg.seed, kernel)
    eps = args.eps_scaled / np.sqrt(args.n)
    noise = NoiseSpec("constant", eps, cfg.seed)
    grid = _sim_grid(cfg, args.horizon)
    traj = simulate_sde(q0, grid, noise, kernel)
    write_trajectory_csv(args.out / "trajectory.csv", traj)
    if args.svg:
        write_svg(args.out / "trajectory.svg", traj)
    summary = {"landmarks": args.n, "eps": eps, "eps_scaled": args.eps_scaled,
               "h0_initial": h0(traj.state(0), kernel),
               "h0_final": h0(traj.state(grid.steps), kernel)}
    _write_summary(args.out, summary)
    return summary


def cmd_kunita(args, cfg: ExperimentConfig) -> dict:
    kernel = GaussianKernel(cfg.kernel_width)
    theta = 2.0 * np.pi * np.arange(args.n) / args.n
    x0 = np.stack([np.cos(theta), np.sin(theta)], axis=1).ravel()
    grid = _sim_grid(cfg, args.horizon)
    traj = simulate_kunita(x0, grid, args.sigma, cfg.seed, kernel)
    write_trajectory_csv(args.out / "trajectory.csv", traj)
    if args.svg:
        write_svg(args.out / "trajectory.svg", traj)
    disp = traj.xs - traj.xs[0]
    msd = float(np.einsum("ji,ji->j", disp, disp)[-1] / args.n)
    summary = {"landmarks": args.n, "sigma": args.sigma, "final_msd": msd}
    _write_summary(args.out, summary)
    return summary


def cmd_montecarlo(args, cfg: ExperimentConfig) -> dict:
    kernel = GaussianKernel(cfg.kernel_width)
    q0 = _circle_state(args.n, cfg.seed, kernel)
    eps = args.eps_scaled / np.sqrt(args.n)
    noise = NoiseSpec("constant", eps, cfg.seed)
    grid = _sim_grid(cfg, args.horizon)
    stats = monte_carlo_hamiltonian(q0, grid, noise, kernel, args.runs)
    write_ensemble_csv(args.out / "ensemble.csv", stats)
    expected = args.n * 2 * eps**2 / 2.0
    summary = {"runs": stats.runs, "divergences": stats.divergences,
               "slope": stats.slope, "expected_slope": expected,
               "relative_slope_error": abs(stats.slope - expected) / expected
               if expected > 0 else None}
    _write_summary(args.out, summary)
    return summary


def cmd_convergence(args, cfg: ExperimentConfig) -> dict:
    dataset = DatasetFile.load(args.dataset)
    if dataset.ground_truth is None:
        raise ValidationError("convergence study requires a dataset with ground truth",
                              "ground_truth")
    truth = dataset.ground_truth
    steps = truth.times.size - 1
    horizon = float(truth.times[-1])
    if not np.allclose(truth.times, np.linspace(0.0, horizon, steps + 1)):
        raise ValidationError("ground-truth times must form a uniform grid from 0",
                              "ground_truth")
    grid = TimeGrid(horizon, steps)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    m_list = [int(m) for m in args.M.split(",") if m.strip()]
    kernel = GaussianKernel(cfg.kernel_width)
    metric = ControlMetric(cfg.metric, cfg.metric_weight, cfg.measure_width)

    def tune(prob: SplineProblem) -> SplineProblem:
        return dataclasses.replace(prob, metric=metric, gamma=cfg.gamma)

    rows, slopes = [], {}
    for method in methods:
        result = convergence_study(truth.configs, grid, dataset.dimension,
                                   m_list, method, kernel, make_problem=tune)
        rows.extend(result.rows)
        slopes[method] = result.slope
    write_study_csv(args.out / "study.csv", rows)
    summary = {"slopes": slopes, "M": m_list, "methods": methods}
    _write_summary(args.out, summary)
    return summary


_HANDLERS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "baseline": cmd_baseline,
    "extrapolate": cmd_extrapolate,
    "simulate": cmd_simulate,
    "kunita": cmd_kunita,
    "montecarlo": cmd_montecarlo,
    "convergence": cmd_convergence,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        summary = _HANDLERS[args.command](args, cfg)
    except (ValidationError, ConfigurationError) as exc:
        json.dump({"error": "validation", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except (IntegrationDivergedError, MetricDegenerateError,
            DegenerateConfigurationError, FloatingPointError) as exc:
        json.dump({"error": "numerical", "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 3
    json.dump(summary, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
