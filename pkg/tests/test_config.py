import json

import pytest

from bevkit.config import RunConfig
from bevkit.geometry import BevGridSpec
from bevkit.instances import DecodeParams
from bevkit.util import FormatError


def test_defaults():
    config = RunConfig()
    assert config.grid_spec() == BevGridSpec(100.0, 100.0, 0.5)
    assert config.depth_bins().count == 48
    assert config.decode_params() == DecodeParams()
    assert config.loss.gamma_f == 0.6


def test_from_dict_nested():
    config = RunConfig.from_dict(
        {"seed": 3, "grid": {"resolution": 0.25}, "decode": {"nms_window": 7}}
    )
    assert config.seed == 3
    assert config.grid_spec().shape == (400, 400)
    assert config.decode_params().nms_window == 7
    assert RunConfig.from_dict(config.to_dict()) == config


@pytest.mark.parametrize(
    "data, key",
    [
        ({"sead": 1}, "sead"),
        ({"grid": {"res": 0.5}}, "res"),
        ({"loss": {"gamma_x": 0.1}}, "gamma_x"),
    ],
)
def test_unknown_keys_are_named(data, key):
    with pytest.raises(ValueError, match=key):
        RunConfig.from_dict(data)


def test_invalid_values():
    with pytest.raises(ValueError, match="beta"):
        RunConfig(beta=-0.1)
    with pytest.raises(ValueError, match="threads"):
        RunConfig(threads=0)
    with pytest.raises(ValueError):
        RunConfig.from_dict({"decode": {"nms_window": 4}})
    with pytest.raises(ValueError, match="JSON object"):
        RunConfig.from_dict([1, 2])


def test_from_json(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"beta": 0.5, "bins": {"dmax": 30.0}}))
    config = RunConfig.from_json(path)
    assert config.beta == 0.5
    assert config.depth_bins().count == 28
    path.write_text("{")
    with pytest.raises(FormatError, match="invalid JSON"):
        RunConfig.from_json(path)


def test_with_overrides():
    config = RunConfig.from_dict({"seed": 1, "grid": {"extent": 40.0}})
    updated = config.with_overrides(
        seed=None, beta=0.0, grid_resolution=1.0, decode_match_distance=4.0
    )
    assert updated.seed == 1
    assert updated.beta == 0.0
    assert updated.grid_spec() == BevGridSpec(40.0, 40.0, 1.0)
    assert updated.decode_params().max_match_distance == 4.0
    with pytest.raises(ValueError, match="colour"):
        config.with_overrides(colour="red")
    with pytest.raises(ValueError, match="fov"):
        config.with_overrides(grid_fov=90.0)


def test_thread_count(monkeypatch):
    monkeypatch.delenv("BEVKIT_THREADS", raising=False)
    assert RunConfig().thread_count() == 1
    monkeypatch.setenv("BEVKIT_THREADS", "4")
    assert RunConfig().thread_count() == 4
    assert RunConfig(threads=2).thread_count() == 2
    assert RunConfig(threads=8).thread_count() == 4
    monkeypatch.delenv("BEVKIT_THREADS")
    assert RunConfig(threads=8).thread_count() == 8
    monkeypatch.setenv("BEVKIT_THREADS", "many")
    with pytest.raises(ValueError, match="BEVKIT_THREADS"):
        RunConfig().thread_count()
