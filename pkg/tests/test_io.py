import logging
import struct

import numpy as np
import pytest

from bevkit import io
from bevkit.egomotion import SE3Pose
from bevkit.fields import Field2D, Field3D
from bevkit.instances import BevBox, InstanceMap
from bevkit.probabilistic import Trajectory, random_model
from bevkit.synth import default_rig
from bevkit.util import FormatError


def header(version=1, c=1, h=2, w=3) -> bytes:
    return b"BGRD" + struct.pack("<4I", version, c, h, w)


def test_bgrid_layout():
    raw = io.encode_bgrid(np.arange(6.0).reshape(2, 3))
    assert raw[:20] == header()
    assert np.frombuffer(raw[20:], dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]


def test_bgrid_decodes_to_field3d():
    data = np.random.default_rng(0).normal(size=(2, 3, 4))
    out = io.decode_bgrid(io.encode_bgrid(data))
    assert isinstance(out, Field3D)
    np.testing.assert_allclose(out, data, rtol=1e-6)
    exact = np.array([[0.0, 1.0], [50.0, -2.5]])
    np.testing.assert_array_equal(io.decode_bgrid(io.encode_bgrid(exact))[0], exact)


@pytest.mark.parametrize(
    "raw, message",
    [
        (b"NOPE" + header()[4:], "bad magic"),
        (b"", "bad magic"),
        (b"BGRD\x01\x00", "truncated header"),
        (header(version=2) + bytes(24), "unsupported version"),
        (header() + bytes(20), "expected 24 payload bytes"),
        (header(h=1, w=1) + struct.pack("<f", np.nan), "non-finite"),
    ],
)
def test_bgrid_errors(raw, message):
    with pytest.raises(FormatError, match=message):
        io.decode_bgrid(raw, "grid.bgrid")


def test_bgrid_error_names_the_file(tmp_path):
    path = tmp_path / "broken.bgrid"
    path.write_bytes(b"XXXX")
    with pytest.raises(FormatError, match="broken.bgrid"):
        io.read_bgrid(path)


def test_encode_bgrid_rejects_bad_input():
    with pytest.raises(ValueError, match="2D and 3D"):
        io.encode_bgrid(np.zeros(4))
    with pytest.raises(ValueError, match="finite"):
        io.encode_bgrid(np.array([[np.inf]]))


def test_read_field2d(tmp_path):
    io.write_bgrid(tmp_path / "a.bgrid", np.ones((2, 3)))
    field = io.read_field2d(tmp_path / "a.bgrid")
    assert isinstance(field, Field2D) and field.shape == (2, 3)
    io.write_bgrid(tmp_path / "b.bgrid", np.ones((2, 2, 3)))
    with pytest.raises(FormatError, match="one channel"):
        io.read_field2d(tmp_path / "b.bgrid")


def test_instance_map_file(tmp_path):
    inst = InstanceMap(np.array([[0, 3], [12, 3]]))
    io.write_instance_map(tmp_path / "inst.bgrid", inst)
    back = io.read_instance_map(tmp_path / "inst.bgrid")
    assert isinstance(back, InstanceMap)
    np.testing.assert_array_equal(back, inst)
    io.write_bgrid(tmp_path / "frac.bgrid", np.array([[0.5]]))
    with pytest.raises(FormatError, match="frac.bgrid"):
        io.read_instance_map(tmp_path / "frac.bgrid")


def test_rig_file(tmp_path):
    rig = default_rig(4)
    io.write_rig(tmp_path / "rig.json", rig)
    back = io.read_rig(tmp_path / "rig.json")
    assert back.bins == rig.bins
    assert back.grid == rig.grid
    assert len(back.cameras) == 4
    for a, b in zip(back.cameras, rig.cameras):
        assert a.intrinsics == b.intrinsics
        np.testing.assert_array_equal(a.cam_to_ego.matrix, b.cam_to_ego.matrix)


def test_rig_errors():
    data = io.rig_to_dict(default_rig(1))
    with pytest.raises(FormatError, match="lens"):
        io.rig_from_dict(dict(data, lens="fisheye"))
    del data["cameras"][0]["intrinsics"]["fx"]
    with pytest.raises(FormatError):
        io.rig_from_dict(data)
    with pytest.raises(FormatError, match="missing field"):
        io.rig_from_dict({"bins": {}})


def test_rig_defaults_bins_and_grid():
    data = io.rig_to_dict(default_rig(2))
    del data["bins"], data["grid"]
    rig = io.rig_from_dict(data)
    assert rig.bins.count == 48
    assert rig.grid.shape == (200, 200)


def test_poses_file(tmp_path):
    poses = [SE3Pose.identity(), SE3Pose.from_yaw(0.3, (1.0, -2.0, 0.5))]
    io.write_poses(tmp_path / "poses.jsonl", poses)
    lines = (tmp_path / "poses.jsonl").read_text().splitlines()
    assert len(lines) == 2
    back = io.read_poses(tmp_path / "poses.jsonl")
    for a, b in zip(back, poses):
        np.testing.assert_array_equal(a.matrix, b.matrix)


def test_poses_file_errors(tmp_path):
    path = tmp_path / "poses.jsonl"
    path.write_text("[1, 0, 0]\n")
    with pytest.raises(FormatError, match="pose 0"):
        io.read_poses(path)
    path.write_text("[1, 0,\n")
    with pytest.raises(FormatError, match="invalid JSON"):
        io.read_poses(path)


def test_model_file(tmp_path):
    model = random_model(3, state_dim=2, obs_dim=3, action_dim=1)
    io.write_model(tmp_path / "model.json", model)
    back = io.read_model(tmp_path / "model.json")
    for key, value in io.model_to_dict(model).items():
        np.testing.assert_array_equal(io.model_to_dict(back)[key], value)


def test_model_keys():
    data = io.model_to_dict(random_model(0, state_dim=1, obs_dim=1, action_dim=1))
    with pytest.raises(FormatError, match="unknown model key"):
        io.model_from_dict(dict(data, C=[[1.0]]))
    del data["Pi"]
    with pytest.raises(FormatError, match="missing model key"):
        io.model_from_dict(data)
    data = io.model_to_dict(random_model(0, state_dim=1, obs_dim=1, action_dim=1))
    data["obs_std"] = [0.0]
    with pytest.raises(FormatError, match="strictly positive"):
        io.model_from_dict(data)


def test_trajectory_file(tmp_path):
    traj = Trajectory([[0.5, 1.0], [2.0, -1.0]], [[1.0], [0.0]])
    io.write_trajectory(tmp_path / "traj.jsonl", traj)
    back = io.read_trajectory(tmp_path / "traj.jsonl")
    np.testing.assert_array_equal(back.observations, traj.observations)
    np.testing.assert_array_equal(back.actions, traj.actions)

    without_actions = Trajectory([[1.0], [2.0], [3.0]], [])
    io.write_trajectory(tmp_path / "obs.jsonl", without_actions)
    assert io.read_trajectory(tmp_path / "obs.jsonl").actions.shape == (3, 0)


def test_trajectory_file_errors(tmp_path):
    path = tmp_path / "traj.jsonl"
    path.write_text('{"o": [1.0]}\n')
    with pytest.raises(FormatError, match="missing field"):
        io.read_trajectory(path)


def test_boxes_file(tmp_path):
    first = [BevBox(1.0, 2.0, 4.5, 2.0, 0.1, 1), BevBox(-3.0, 0.5, 3.0, 1.5, 0.0, 2)]
    steps = [first, []]
    io.write_boxes(tmp_path / "boxes.jsonl", steps)
    assert io.read_boxes(tmp_path / "boxes.jsonl") == steps
    (tmp_path / "bad.jsonl").write_text('[{"center_x": 0.0}]\n')
    with pytest.raises(FormatError, match="step 0"):
        io.read_boxes(tmp_path / "bad.jsonl")


def test_json_helpers(tmp_path):
    io.write_json(tmp_path / "a.json", {"b": 1, "a": [1.5]})
    assert (tmp_path / "a.json").read_text().startswith('{\n  "a"')
    assert io.read_json(tmp_path / "a.json") == {"a": [1.5], "b": 1}
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(FormatError, match="invalid JSON"):
        io.read_json(tmp_path / "bad.json")


def test_pgm_values(tmp_path):
    field = np.array([[0.0, 1.0, 0.5], [-1.0, 2.0, 0.25]])
    io.write_pgm(field, tmp_path / "img.pgm", 0.0, 1.0)
    raw = (tmp_path / "img.pgm").read_bytes()
    head = b"P5\n3 2\n255\n"
    assert raw[: len(head)] == head
    assert list(raw[len(head) :]) == [0, 255, 128, 0, 255, 64]


def test_pgm_errors(tmp_path):
    with pytest.raises(ValueError, match="vmax"):
        io.write_pgm(np.zeros((2, 2)), tmp_path / "a.pgm", 1.0, 1.0)
    with pytest.raises(ValueError, match="2D"):
        io.write_pgm(np.zeros((1, 2, 2)), tmp_path / "a.pgm", 0.0, 1.0)


def test_bgrid_files_are_logged(tmp_path, caplog):
    path = tmp_path / "logged.bgrid"
    with caplog.at_level(logging.DEBUG, logger="bevkit.io"):
        io.write_bgrid(path, np.zeros((2, 3)))
        io.read_bgrid(path)
    messages = [r.getMessage() for r in caplog.records]
    assert messages == [f"wrote {path} (44 bytes)", f"read {path} with shape (1, 2, 3)"]
