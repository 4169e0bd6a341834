import math
import warnings

import numpy as np
import pytest

from bevkit.geometry import BevGridSpec
from bevkit.instances import (
    BevBox,
    DecodeParams,
    InstanceMap,
    boxes_to_occupancy,
    centerness_label,
    centers_of_mass,
    flow_label,
    make_labels,
    offset_label,
)

GRID = BevGridSpec(10.0, 10.0, 0.5)


def box(x=0.0, y=0.0, length=1.0, width=1.0, yaw=0.0, instance_id=1) -> BevBox:
    return BevBox(x, y, length, width, yaw, instance_id)


def test_box_validation():
    with pytest.raises(ValueError, match="positive"):
        box(length=0.0)
    with pytest.raises(ValueError, match="instance_id"):
        box(instance_id=0)
    with pytest.raises(ValueError, match="instance_id"):
        box(instance_id=1.5)
    with pytest.raises(ValueError, match="finite"):
        box(x=np.nan)


def test_box_contains_and_corners():
    b = box(x=1.0, y=2.0, length=4.0, width=2.0, yaw=math.pi / 2)
    # heading along +y: length spans y, width spans x
    assert b.contains([1.0], [3.9])[0]
    assert not b.contains([2.1], [2.0])[0]
    assert b.contains([2.0], [2.0])[0]
    corners = b.corners()
    assert corners.shape == (4, 2)
    np.testing.assert_allclose(corners.mean(axis=0), [1.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(np.sort(corners[:, 1]), [0.0, 0.0, 4.0, 4.0], atol=1e-12)


def test_instance_map_validation():
    inst = InstanceMap(np.array([[0.0, 3.0], [3.0, 7.0]]))
    assert inst.dtype == np.int64
    assert inst.ids == [3, 7]
    with pytest.raises(ValueError, match="integers"):
        InstanceMap(np.array([[0.5]]))
    with pytest.raises(ValueError, match="non-negative"):
        InstanceMap(np.array([[-1]]))
    with pytest.raises(ValueError, match="two-dimensional"):
        InstanceMap(np.zeros(3, dtype=int))
    assert InstanceMap.empty((2, 3)).ids == []


def test_instance_map_relabel_and_fragments():
    inst = InstanceMap(np.array([[1, 0, 1], [2, 2, 0]]))
    assert inst.fragmented_ids() == [1]
    assert inst.is_fragmented()
    relabeled = inst.relabel({1: 5, 2: 1})
    np.testing.assert_array_equal(relabeled, [[5, 0, 5], [1, 1, 0]])
    np.testing.assert_array_equal(inst.segmentation(), [[1, 0, 1], [1, 1, 0]])


def test_decode_params_validation():
    assert DecodeParams() == DecodeParams(0.1, 5, 2.5)
    for kwargs in [
        dict(center_threshold=0.0),
        dict(center_threshold=1.0),
        dict(nms_window=4),
        dict(nms_window=1),
        dict(max_match_distance=0.0),
    ]:
        with pytest.raises(ValueError):
            DecodeParams(**kwargs)


def test_occupancy_unit_box_at_origin():
    seg, inst = boxes_to_occupancy([box()], GRID)
    expected = np.zeros(GRID.shape)
    expected[9:11, 9:11] = 1
    np.testing.assert_array_equal(seg, expected)
    np.testing.assert_array_equal(inst, expected.astype(int))


def test_occupancy_empty_and_outside():
    seg, inst = boxes_to_occupancy([], GRID)
    assert seg.sum() == 0 and inst.ids == []
    seg, inst = boxes_to_occupancy([box(x=20.0, y=-30.0)], GRID)
    assert seg.sum() == 0 and inst.ids == []


def test_occupancy_larger_id_wins():
    a = box(length=3.0, instance_id=4)
    b = box(x=1.0, length=3.0, instance_id=2)
    _, first = boxes_to_occupancy([a, b], GRID)
    _, second = boxes_to_occupancy([b, a], GRID)
    np.testing.assert_array_equal(first, second)
    assert first[10, 10] == 4
    assert first[10, 12] == 4
    assert first[10, 13] == 2


def test_occupancy_duplicate_id():
    with pytest.raises(ValueError, match="Duplicate instance id"):
        boxes_to_occupancy([box(), box(x=3.0)], GRID)


def test_centers_of_mass():
    inst = InstanceMap(np.array([[0, 2, 2, 2], [5, 0, 0, 0]]))
    assert centers_of_mass(inst) == {2: (0.0, 2.0), 5: (1.0, 0.0)}
    assert centers_of_mass(InstanceMap.empty((3, 3))) == {}


def test_centerness_examples():
    ids = np.zeros((20, 20), dtype=int)
    ids[5, 5] = 1
    ids[15, 15] = 2
    field = centerness_label(InstanceMap(ids), sigma=3.0)
    assert field[5, 5] == 1.0
    assert field[15, 15] == 1.0
    assert field[5, 8] == pytest.approx(math.exp(-0.5))
    assert field[5, 8] == pytest.approx(0.60653, abs=1e-5)
    assert field.min() >= 0 and field.max() <= 1
    with pytest.raises(ValueError, match="sigma"):
        centerness_label(InstanceMap(ids), sigma=0.0)


def test_offset_examples():
    ids = np.zeros((5, 7), dtype=int)
    ids[2, 3:6] = 1
    offsets = offset_label(InstanceMap(ids))
    assert offsets.channels == 2
    np.testing.assert_array_equal(offsets[:, 2, 3], [0.0, 1.0])
    np.testing.assert_array_equal(offsets[:, 2, 4], [0.0, 0.0])
    np.testing.assert_array_equal(offsets[:, 2, 5], [0.0, -1.0])
    assert np.all(offsets[:, ids == 0] == 0)
    np.testing.assert_array_equal(offset_label(InstanceMap.empty((3, 3))), 0.0)


def test_flow_static_and_moving():
    _, inst = boxes_to_occupancy([box(length=2.0, instance_id=3)], GRID)
    flow, absent = flow_label(inst, inst)
    assert absent == []
    np.testing.assert_array_equal(flow, 0.0)

    _, moved = boxes_to_occupancy([box(x=1.0, length=2.0, instance_id=3)], GRID)
    flow, _ = flow_label(inst, moved)
    mask = np.asarray(inst) == 3
    np.testing.assert_allclose(flow[0][mask], 0.0, atol=1e-12)
    np.testing.assert_allclose(flow[1][mask], 2.0, atol=1e-12)
    np.testing.assert_array_equal(flow[:, ~mask], 0.0)


def test_flow_absent_and_new_instances():
    _, inst = boxes_to_occupancy([box(instance_id=1)], GRID)
    empty = InstanceMap.empty(GRID.shape)
    with pytest.warns(UserWarning, match="absent"):
        flow, absent = flow_label(inst, empty)
    assert absent == [1]
    np.testing.assert_array_equal(flow, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        flow, absent = flow_label(empty, inst)
    assert absent == []
    np.testing.assert_array_equal(flow, 0.0)


def test_flow_is_constant_per_instance():
    rng = np.random.default_rng(0)
    for _ in range(10):
        boxes_t = [
            box(-2.0, -2.0, 2.0, 1.0, rng.uniform(-1, 1), 1),
            box(2.5, 2.5, 1.5, 1.5, rng.uniform(-1, 1), 2),
        ]
        shift = rng.uniform(-1, 1, size=2)
        boxes_t1 = [
            BevBox(
                b.center_x + shift[0],
                b.center_y + shift[1],
                b.length,
                b.width,
                b.yaw,
                b.instance_id,
            )
            for b in boxes_t
        ]
        _, inst_t = boxes_to_occupancy(boxes_t, GRID)
        _, inst_t1 = boxes_to_occupancy(boxes_t1, GRID)
        flow, _ = flow_label(inst_t, inst_t1)
        for inst_id in inst_t.ids:
            cells = flow[:, np.asarray(inst_t) == inst_id]
            assert np.all(cells == cells[:, :1])


def test_make_labels():
    steps = [[box(instance_id=1)], [box(x=1.0, instance_id=1)], []]
    labels = make_labels(steps, GRID)
    assert len(labels) == 3
    keys = {"segmentation", "instances", "centerness", "offset", "flow"}
    assert set(labels[0]) == keys
    mask = np.asarray(labels[0]["instances"]) == 1
    np.testing.assert_allclose(labels[0]["flow"][1][mask], 2.0)
    np.testing.assert_array_equal(labels[1]["flow"], 0.0)
    np.testing.assert_array_equal(labels[2]["flow"], 0.0)
    assert labels[2]["instances"].ids == []


def test_make_labels_flags_fragmented_maps():
    horizontal = box(length=6.0, width=1.0, instance_id=1)
    vertical = box(length=6.0, width=1.0, yaw=math.pi / 2, instance_id=2)
    with pytest.warns(UserWarning, match="fragmented"):
        labels = make_labels([[horizontal, vertical]], GRID)
    assert labels[0]["instances"].fragmented_ids() == [1]
