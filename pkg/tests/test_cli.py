import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from bevkit import io
from bevkit.cli import cli
from bevkit.geometry import BevGridSpec, CameraIntrinsics, DepthBins
from bevkit.probabilistic import LinearGaussianWorldModel, Trajectory
from bevkit.synth import SceneConfig, VehicleConfig, camera_at_yaw, make_dataset


def small_rig() -> io.Rig:
    intrinsics = CameraIntrinsics(40.0, 40.0, 32.0, 16.0, 64, 32)
    cameras = [camera_at_yaw(k * math.pi / 2, intrinsics) for k in range(4)]
    return io.Rig(cameras, DepthBins(2.0, 30.0, 1.0), BevGridSpec(40.0, 40.0, 0.5))


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def bundle(runner, tmp_path):
    path = tmp_path / "scene"
    args = ["--seed", "4", "synth", "--vehicles", "2", "--horizon", "3"]
    result = runner.invoke(cli, args + ["-o", str(path)])
    assert result.exit_code == 0, result.output
    return path


def test_synth_writes_horizon_plus_one_steps(runner, tmp_path):
    out = tmp_path / "nested" / "scene"
    result = runner.invoke(
        cli, ["--grid-extent", "40", "synth", "--horizon", "6", "-o", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert len((out / "poses.jsonl").read_text().splitlines()) == 7
    assert len(list((out / "cams").glob("t006_c*.bgrid"))) == 6
    scene = io.read_json(out / "scene.json")
    assert scene["rig"]["grid"] == {"extent": 40.0, "resolution": 0.5}


def test_unknown_config_key_is_a_usage_error(runner, tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"grid": {"extent": 50.0, "cell": 1.0}}))
    result = runner.invoke(cli, ["--config", str(config), "synth", "-o", "out"])
    assert result.exit_code == 1
    assert "cell" in result.output


def test_invalid_flag_value_is_a_usage_error(runner, tmp_path):
    result = runner.invoke(cli, ["--nms-window", "4", "synth", "-o", str(tmp_path)])
    assert result.exit_code == 1
    result = runner.invoke(cli, ["synth", "--no-such-flag"])
    assert result.exit_code == 1


def test_corrupted_grid_is_a_data_error(runner, tmp_path):
    path = tmp_path / "bad.bgrid"
    path.write_bytes(b"GRID" + bytes(16))
    result = runner.invoke(cli, ["warp", str(path), "-o", str(tmp_path / "out.bgrid")])
    assert result.exit_code == 2
    assert "bad magic" in result.output


def test_warp_identity(runner, tmp_path):
    data = np.random.default_rng(0).uniform(size=(2, 8, 8))
    io.write_bgrid(tmp_path / "in.bgrid", data)
    result = runner.invoke(
        cli,
        [
            "--grid-extent",
            "4",
            "warp",
            str(tmp_path / "in.bgrid"),
            "-o",
            str(tmp_path / "out.bgrid"),
        ],
    )
    assert result.exit_code == 0, result.output
    np.testing.assert_array_equal(
        io.read_bgrid(tmp_path / "out.bgrid"), io.read_bgrid(tmp_path / "in.bgrid")
    )


def test_lift_and_render(runner, bundle, tmp_path):
    bev = tmp_path / "bev.bgrid"
    result = runner.invoke(cli, ["lift", str(bundle), "--step", "1", "-o", str(bev)])
    assert result.exit_code == 0, result.output
    grid = io.read_bgrid(bev)
    assert grid.shape == (1, 200, 200)
    assert grid.min() >= 0

    pgm = tmp_path / "bev.pgm"
    result = runner.invoke(cli, ["render-pgm", str(bev), "-o", str(pgm)])
    assert result.exit_code == 0, result.output
    assert pgm.read_bytes().startswith(b"P5\n200 200\n255\n")

    result = runner.invoke(cli, ["lift", str(bundle), "--step", "9", "-o", str(bev)])
    assert result.exit_code == 1


def test_pipeline_on_synthetic_scene(runner, bundle, tmp_path):
    out = tmp_path / "run"
    result = runner.invoke(cli, ["pipeline", str(bundle), "-o", str(out)])
    assert result.exit_code == 0, result.output
    summary = io.read_json(out / "summary.json")
    assert summary["steps"] == 4
    assert summary["vpq"] == 1.0
    assert summary["iou"] == 1.0
    assert summary["fp"] == 0 and summary["fn"] == 0
    assert len(list((out / "maps").glob("*.bgrid"))) == 4
    assert len(list((out / "bev").glob("*.bgrid"))) == 4


def test_track_keeps_ids_of_a_moving_vehicle(runner, tmp_path):
    path = tmp_path / "scene"
    vehicle = VehicleConfig(x=6.0, y=4.0, yaw=0.3, speed=2.0, yaw_rate=0.05)
    make_dataset(SceneConfig(vehicles=(vehicle,), horizon=5, rig=small_rig()), path)
    out = tmp_path / "tracked"
    result = runner.invoke(cli, ["track", str(path), "-o", str(out)])
    assert result.exit_code == 0, result.output
    ids = [io.read_instance_map(p).ids for p in sorted(out.glob("t*.bgrid"))]
    assert len(ids) == 6
    assert all(step == ids[0] for step in ids)
    assert len(ids[0]) == 1
    records = io.read_json(out / "matches.json")
    assert all(r["matched"] for r in records if r["step"] > 0)


def test_decode_and_track_then_vpq(runner, bundle, tmp_path):
    gt = tmp_path / "gt"
    gt.mkdir()
    for path in sorted((bundle / "labels").glob("t*_instances.bgrid")):
        (gt / path.name.replace("_instances", "")).write_bytes(path.read_bytes())
    truth = [io.read_instance_map(p) for p in sorted(gt.glob("t*.bgrid"))]

    result = runner.invoke(cli, ["decode", str(bundle), "-o", str(tmp_path / "dec")])
    assert result.exit_code == 0, result.output
    decoded = [io.read_instance_map(p) for p in sorted((tmp_path / "dec").glob("*"))]
    assert len(decoded) == len(truth) == 4
    for pred, true in zip(decoded, truth):
        # each step on its own matches the labels up to a renaming of ids
        pred, true = np.asarray(pred), np.asarray(true)
        np.testing.assert_array_equal(pred != 0, true != 0)
        pairs = set(zip(pred[true != 0].tolist(), true[true != 0].tolist()))
        assert len(pairs) == len({p for p, _ in pairs}) == len({g for _, g in pairs})
        assert sorted(p for p, _ in pairs) == list(range(1, len(pairs) + 1))

    tracked = tmp_path / "tracked"
    result = runner.invoke(cli, ["track", str(bundle), "-o", str(tracked)])
    assert result.exit_code == 0, result.output
    report = tmp_path / "vpq.json"
    args = ["vpq", "--pred", str(tracked), "--gt", str(gt), "--range", "short"]
    result = runner.invoke(cli, args + ["-o", str(report)])
    assert result.exit_code == 0, result.output
    scores = io.read_json(report)
    assert scores["vpq"] == 1.0
    assert len(scores["per_t"]) == 4

    empty = tmp_path / "empty"
    empty.mkdir()
    result = runner.invoke(cli, ["vpq", "--pred", str(empty), "--gt", str(gt)])
    assert result.exit_code == 2


def test_labels_match_bundle(runner, bundle, tmp_path):
    result = runner.invoke(cli, ["labels", str(bundle), "-o", str(tmp_path / "labels")])
    assert result.exit_code == 0, result.output
    assert len(list((tmp_path / "labels").glob("t000_*.bgrid"))) == 5


def test_elbo_demo(runner, tmp_path):
    out = tmp_path / "elbo.json"
    args = ["--seed", "2", "elbo-demo", "--steps", "4", "--samples", "200"]
    result = runner.invoke(cli, args + ["-o", str(out)])
    assert result.exit_code == 0, result.output
    summary = io.read_json(out)
    assert summary["steps"] == 4
    assert summary["elbo_analytic"] <= summary["log_evidence"] + 1e-9
    assert summary["gap"] == pytest.approx(
        summary["log_evidence"] - summary["elbo_analytic"]
    )
    assert summary["free_energy"] == -summary["elbo_analytic"]
    assert summary["first_step_kl_to_prior"] >= 0


def test_elbo_demo_numerical_failure(runner, tmp_path):
    model = LinearGaussianWorldModel(
        transition_matrix=[[1.0]],
        action_matrix=[[0.0]],
        observation_matrix=[[0.0]],
        policy_matrix=[[0.0]],
        transition_std=[1.0],
        obs_std=[1e-200],
        action_std=[1.0],
    )
    io.write_model(tmp_path / "model.json", model)
    io.write_trajectory(tmp_path / "traj.jsonl", Trajectory([[0.0]], [[0.0]]))
    args = [
        "elbo-demo",
        "--model",
        str(tmp_path / "model.json"),
        "--trajectory",
        str(tmp_path / "traj.jsonl"),
    ]
    result = runner.invoke(cli, args)
    assert result.exit_code == 3


def test_outputs_do_not_depend_on_thread_count(runner, tmp_path):
    outputs = {}
    for threads in ("1", "4"):
        root = tmp_path / threads
        args = ["--seed", "5", "synth", "--vehicles", "2", "--horizon", "2"]
        env = {"BEVKIT_THREADS": threads}
        result = runner.invoke(cli, args + ["-o", str(root / "scene")], env=env)
        assert result.exit_code == 0, result.output
        result = runner.invoke(
            cli, ["pipeline", str(root / "scene"), "-o", str(root / "run")], env=env
        )
        assert result.exit_code == 0, result.output
        outputs[threads] = {
            p.relative_to(root): p.read_bytes() for p in root.rglob("*") if p.is_file()
        }
    assert outputs["1"] == outputs["4"]
