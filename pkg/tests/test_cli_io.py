import csv
import json
import xml.etree.ElementTree as ElementTree

import numpy as np
import pytest

from shapespline import (DatasetFile, ExperimentConfig, GaussianKernel,
                         TimeGrid, TimedBlock, Trajectory, ValidationError,
                         synth_circle_to_pinched_ellipse,
                         synth_circle_to_rotating_ellipse, write_svg,
                         write_trajectory_csv)
from shapespline.cli import main


def sample_dataset():
    return synth_circle_to_pinched_ellipse(5, m=3, noise_sigma=0.05, seed=1)


# ---------------------------------------------------------------------------
# dataset files


def test_dataset_round_trip(tmp_path):
    data = sample_dataset()
    path = tmp_path / "data.json"
    data.save(path)
    loaded = DatasetFile.load(path)
    assert loaded.dimension == data.dimension
    assert loaded.landmarks == data.landmarks
    assert np.array_equal(loaded.observations.times, data.observations.times)
    assert np.array_equal(loaded.observations.configs, data.observations.configs)


def test_dataset_round_trip_with_ground_truth(tmp_path):
    data = synth_circle_to_rotating_ellipse(6, 40, 4)
    path = tmp_path / "data.json"
    data.save(path)
    loaded = DatasetFile.load(path)
    assert np.array_equal(loaded.ground_truth.times, data.ground_truth.times)
    assert np.array_equal(loaded.ground_truth.configs, data.ground_truth.configs)


@pytest.mark.parametrize("mutate, field", [
    (lambda doc: doc.update(dimension="two"), "dimension"),
    (lambda doc: doc.update(landmarks=0), "landmarks"),
    (lambda doc: doc.update(observations=[]), "observations"),
    (lambda doc: doc["observations"][0].update(time="soon"), "observations[0].time"),
    (lambda doc: doc["observations"][1].update(points=[[0.0, 1.0]]), "observations[1].points"),
    (lambda doc: doc.update(extra=1), None),
])
def test_dataset_schema_violations_carry_field_path(mutate, field):
    doc = sample_dataset().to_json()
    mutate(doc)
    with pytest.raises(ValidationError) as err:
        DatasetFile.from_json(doc)
    if field is not None:
        assert field in str(err.value)


def test_dataset_rejects_non_increasing_times():
    doc = sample_dataset().to_json()
    doc["observations"][1]["time"] = doc["observations"][0]["time"]
    with pytest.raises(ValidationError):
        DatasetFile.from_json(doc)


def test_dataset_rejects_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ValidationError):
        DatasetFile.load(path)


# ---------------------------------------------------------------------------
# experiment configuration


def test_config_round_trip(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"kernel_width": 0.6, "gamma": 500.0, "metric": "dualkernel"}))
    cfg = ExperimentConfig.load(path)
    assert cfg.kernel_width == 0.6
    assert cfg.gamma == 500.0
    assert cfg.metric == "dualkernel"
    assert cfg.max_iter == 2000  # untouched default


@pytest.mark.parametrize("doc", [
    {"kernel_width": -1.0},
    {"metric": "spectral"},
    {"grid_steps": 0},
    {"unknown_knob": 1},
    {"noise_sigma": -0.5},
])
def test_config_validation(doc):
    with pytest.raises(ValidationError):
        ExperimentConfig.from_json(doc)


# ---------------------------------------------------------------------------
# synthetic families


def test_pinched_family_starts_from_unit_circle():
    data = synth_circle_to_pinched_ellipse(8, m=4, noise_sigma=0.0, seed=0,
                                           dense_steps=20)
    first = data.ground_truth.configs[0].reshape(-1, 2)
    theta = 2 * np.pi * np.arange(8) / 8
    assert np.allclose(first, np.stack([np.cos(theta), np.sin(theta)], axis=1), atol=1e-12)


def test_synth_same_seed_same_bytes(tmp_path):
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    synth_circle_to_pinched_ellipse(6, m=3, noise_sigma=0.1, seed=5).save(pa)
    synth_circle_to_pinched_ellipse(6, m=3, noise_sigma=0.1, seed=5).save(pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_rotating_family_points_lie_on_ellipses():
    data = synth_circle_to_rotating_ellipse(12, 50, 5)
    for row in data.ground_truth.configs[::10]:
        pts = row.reshape(-1, 2)
        # general conic through the points: A x^2 + B xy + C y^2 + D x + E y = 1
        design = np.stack([pts[:, 0]**2, pts[:, 0] * pts[:, 1], pts[:, 1]**2,
                           pts[:, 0], pts[:, 1]], axis=1)
        coef, *_ = np.linalg.lstsq(design, np.ones(len(pts)), rcond=None)
        assert np.abs(design @ coef - 1.0).max() < 1e-10


def test_rotating_observations_subsample_the_truth():
    data = synth_circle_to_rotating_ellipse(6, 60, 4)
    truth_times = list(data.ground_truth.times)
    for t, config in zip(data.observations.times, data.observations.configs):
        k = truth_times.index(t)
        assert np.array_equal(config, data.ground_truth.configs[k])


# ---------------------------------------------------------------------------
# CSV / SVG emission


def test_trajectory_csv_columns_and_round_trip(tmp_path):
    grid = TimeGrid(1.0, 4)
    rng = np.random.Generator(np.random.PCG64(0))
    traj = Trajectory(grid, rng.standard_normal((5, 6)), rng.standard_normal((5, 6)), 2)
    u = rng.standard_normal((5, 6))
    path = tmp_path / "trajectory.csv"
    write_trajectory_csv(path, traj, u)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == (["t"]
                       + [f"x_{i}_{j}" for i in (1, 2, 3) for j in (1, 2)]
                       + [f"p_{i}_{j}" for i in (1, 2, 3) for j in (1, 2)]
                       + [f"u_{i}_{j}" for i in (1, 2, 3) for j in (1, 2)])
    body = np.array([[float(v) for v in row] for row in rows[1:]])
    assert np.array_equal(body[:, 1:7], traj.xs)
    assert np.array_equal(body[:, 7:13], traj.ps)
    assert np.array_equal(body[:, 13:19], u)


def test_svg_output_is_valid_xml(tmp_path):
    grid = TimeGrid(1.0, 6)
    rng = np.random.Generator(np.random.PCG64(1))
    traj = Trajectory(grid, rng.standard_normal((7, 8)), np.zeros((7, 8)), 2)
    path = tmp_path / "plot.svg"
    write_svg(path, traj, rng.standard_normal((7, 8)))
    root = ElementTree.parse(path).getroot()
    assert root.tag.endswith("svg")
    assert len(list(root)) > 2


# ---------------------------------------------------------------------------
# CLI commands


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_cli_synth_then_fit(tmp_path):
    out = tmp_path / "run"
    assert run_cli("synth", "--family", "pinched", "--n", "5", "--m", "3",
                   "--out", out) == 0
    dataset = out / "dataset.json"
    assert dataset.exists()
    assert run_cli("fit", "--dataset", dataset, "--out", out, "--grid-steps", "30",
                   "--gamma", "1000", "--svg") == 0
    summary = json.loads((out / "summary.json").read_text())
    assert {"objective", "residuals", "iterations", "euler_lagrange_residual",
            "control_energy"} <= set(summary)
    assert (out / "trajectory.csv").exists()
    assert (out / "trajectory.svg").exists()
    ElementTree.parse(out / "trajectory.svg")


def test_cli_baseline_and_extrapolate(tmp_path):
    out = tmp_path / "run"
    assert run_cli("synth", "--n", "5", "--m", "3", "--out", out) == 0
    dataset = out / "dataset.json"
    assert run_cli("baseline", "--dataset", dataset, "--out", out / "base",
                   "--grid-steps", "30") == 0
    assert run_cli("extrapolate", "--dataset", dataset, "--out", out / "ext",
                   "--grid-steps", "30", "--t-end", "5.0") == 0
    summary = json.loads((out / "ext" / "summary.json").read_text())
    assert summary["extended_horizon"] >= 5.0


def test_cli_fit_is_deterministic(tmp_path):
    out = tmp_path / "run"
    assert run_cli("synth", "--n", "4", "--m", "2", "--out", out) == 0
    dataset = out / "dataset.json"
    for name in ("a", "b"):
        assert run_cli("fit", "--dataset", dataset, "--out", out / name,
                       "--grid-steps", "20") == 0
    assert (out / "a" / "trajectory.csv").read_bytes() == (out / "b" / "trajectory.csv").read_bytes()


def test_cli_simulate_kunita_montecarlo(tmp_path):
    out = tmp_path
    assert run_cli("simulate", "--n", "6", "--eps-scaled", "0.5",
                   "--grid-steps", "50", "--out", out / "sde") == 0
    assert run_cli("kunita", "--n", "6", "--sigma", "0.2",
                   "--grid-steps", "50", "--out", out / "kun") == 0
    assert run_cli("montecarlo", "--n", "6", "--eps-scaled", "0.5", "--runs", "10",
                   "--grid-steps", "50", "--out", out / "mc") == 0
    stats = json.loads((out / "mc" / "summary.json").read_text())
    assert stats["runs"] == 10
    with open(out / "mc" / "ensemble.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "mean_H0", "var_H0"]
    assert len(rows) == 52


def test_cli_convergence(tmp_path):
    out = tmp_path / "conv"
    data = synth_circle_to_rotating_ellipse(4, 24, 3)
    path = tmp_path / "data.json"
    data.save(path)
    assert run_cli("convergence", "--dataset", path, "--out", out,
                   "--methods", "piecewise", "--M", "2,3") == 0
    assert (out / "study.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert "piecewise" in summary["slopes"]


def test_cli_validation_failures_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli("fit", "--dataset", bad, "--out", tmp_path) == 2
    data = tmp_path / "data.json"
    sample_dataset().save(data)
    # convergence without ground truth
    assert run_cli("convergence", "--dataset", data, "--out", tmp_path) == 2
    # invalid config file
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"metric": "spectral"}))
    assert run_cli("fit", "--dataset", data, "--config", cfg, "--out", tmp_path) == 2


def test_cli_numerical_failures_exit_3(tmp_path):
    # an absurd noise amplitude overflows the state immediately
    assert run_cli("simulate", "--n", "4", "--eps-scaled", "1e300",
                   "--grid-steps", "10", "--out", tmp_path) == 3
