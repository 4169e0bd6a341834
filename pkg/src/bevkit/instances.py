"""
Bird's-eye-view instance labels: rasterised vehicle footprints and the
centerness, offset and flow targets derived from them.

Centers of mass are kept in continuous cell coordinates ``(row, col)``; offsets
and flows are expressed in cells with channel 0 the row component and channel 1
the column component.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .fields import Field2D, Field3D
from .geometry import BevGridSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BevBox:
    """
    A vehicle footprint in the ego frame.

    ``length`` runs along the heading ``yaw`` and ``width`` across it.
    """

    center_x: float
    center_y: float
    length: float
    width: float
    yaw: float
    instance_id: int

    def __post_init__(self):
        for name in ("center_x", "center_y", "length", "width", "yaw"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"BevBox.{name} must be finite.")
        if self.length <= 0 or self.width <= 0:
            raise ValueError(
                f"Box dimensions must be positive, got {self.length} x {self.width}."
            )
        if int(self.instance_id) != self.instance_id or self.instance_id < 1:
            raise ValueError(
                f"instance_id must be a positive integer, got {self.instance_id}."
            )
        object.__setattr__(self, "instance_id", int(self.instance_id))

    def contains(self, xs, ys) -> np.ndarray:
        """Whether ego points lie inside the rotated rectangle (edges included)."""
        dx = np.asarray(xs) - self.center_x
        dy = np.asarray(ys) - self.center_y
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        along = c * dx + s * dy
        across = -s * dx + c * dy
        return (np.abs(along) <= self.length / 2) & (np.abs(across) <= self.width / 2)

    def corners(self) -> np.ndarray:
        """The four footprint corners as a ``(4, 2)`` array, counter-clockwise."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        half_l, half_w = self.length / 2, self.width / 2
        local = np.array(
            [[half_l, half_w], [-half_l, half_w], [-half_l, -half_w], [half_l, -half_w]]
        )
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.center_x, self.center_y])

    def to_dict(self) -> dict:  # noqa D102
        return {
            "center_x": self.center_x,
            "center_y": self.center_y,
            "length": self.length,
            "width": self.width,
            "yaw": self.yaw,
            "instance_id": self.instance_id,
        }


class InstanceMap(np.ndarray):
    """
    A two-dimensional ``numpy.ndarray`` of integer instance ids; 0 is background.

    Ids need not be contiguous.

    >>> InstanceMap(np.array([[0, 3], [3, 0]])).ids
    [3]
    """

    def __new__(cls, input_array):  # noqa
        arr = np.asarray(input_array)
        if arr.ndim != 2:
            raise ValueError(f"InstanceMap must be two-dimensional, got {arr.shape}.")
        if arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
                raise ValueError("InstanceMap values must be integers.")
        elif arr.dtype.kind not in "iub":
            raise TypeError(f"InstanceMap needs an integer array, got {arr.dtype}.")
        arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise ValueError("InstanceMap ids must be non-negative.")
        return arr.view(cls)

    def __array_finalize__(self, obj):
        if obj is None:
            return

    @classmethod
    def empty(cls, shape: Tuple[int, int]) -> "InstanceMap":  # noqa D102
        return cls(np.zeros(shape, dtype=np.int64))

    @property
    def ids(self) -> List[int]:
        """Sorted nonzero ids present in the map."""
        values = np.unique(np.asarray(self))
        return [int(v) for v in values if v != 0]

    def fragmented_ids(self) -> List[int]:
        """Ids whose cells do not form a single 4-connected region."""
        out = []
        for inst_id in self.ids:
            _, n_regions = ndimage.label(np.asarray(self) == inst_id)
            if n_regions > 1:
                out.append(inst_id)
        return out

    def is_fragmented(self) -> bool:  # noqa D102
        return len(self.fragmented_ids()) > 0

    def segmentation(self) -> Field2D:
        """Binary foreground mask as a ``Field2D``."""
        return Field2D((np.asarray(self) != 0).astype(np.float64))

    def to_field(self) -> Field2D:
        """The ids as a float field, e.g. for writing to a ``.bgrid`` file."""
        return Field2D(np.asarray(self, dtype=np.float64))

    def relabel(self, mapping: Dict[int, int]) -> "InstanceMap":
        """Replace ids through ``mapping``; ids not in it are unchanged."""
        src = np.asarray(self)
        out = src.copy()
        for old, new in mapping.items():
            out[src == old] = new
        return InstanceMap(out)


@dataclass(frozen=True)
class DecodeParams:
    """
    Hyperparameters of instance decoding.

    Parameters
    ----------
    center_threshold:
        Minimum centerness of an instance center, in ``(0, 1)``.
    nms_window:
        Odd side length (cells, at least 3) of the non-maximum suppression window.
    max_match_distance:
        Gating distance in meters between warped and current centers.
    """

    center_threshold: float = 0.1
    nms_window: int = 5
    max_match_distance: float = 2.5

    def __post_init__(self):
        if not 0 < self.center_threshold < 1:
            raise ValueError(
                f"center_threshold must lie in (0, 1), got {self.center_threshold}."
            )
        if int(self.nms_window) != self.nms_window:
            raise ValueError(f"nms_window must be an integer, got {self.nms_window}.")
        if self.nms_window < 3 or self.nms_window % 2 == 0:
            raise ValueError(
                f"nms_window must be odd and at least 3, got {self.nms_window}."
            )
        if not self.max_match_distance > 0:
            raise ValueError(
                f"max_match_distance must be positive, got {self.max_match_distance}."
            )
        object.__setattr__(self, "nms_window", int(self.nms_window))


def boxes_to_occupancy(
    boxes: Sequence[BevBox], grid: BevGridSpec
) -> Tuple[Field2D, InstanceMap]:
    """
    Rasterise boxes: a cell takes a box's id when its center lies inside the
    box. Where boxes overlap, the larger id wins.
    """
    seen = set()
    for box in boxes:
        if box.instance_id in seen:
            raise ValueError(f"Duplicate instance id {box.instance_id} in one frame.")
        seen.add(box.instance_id)

    ids = np.zeros(grid.shape, dtype=np.int64)
    if boxes:
        rows, cols = np.meshgrid(
            np.arange(grid.height), np.arange(grid.width), indexing="ij"
        )
        xs, ys = grid.cell_to_ego(rows, cols)
        for box in sorted(boxes, key=lambda b: b.instance_id):
            ids[box.contains(xs, ys)] = box.instance_id
    inst = InstanceMap(ids)
    return inst.segmentation(), inst


def centers_of_mass(inst: InstanceMap) -> Dict[int, Tuple[float, float]]:
    """Mean ``(row, col)`` of the cells of every instance, keyed by id."""
    ids = inst.ids
    if not ids:
        return {}
    arr = np.asarray(inst)
    coms = ndimage.center_of_mass(np.ones(arr.shape), labels=arr, index=ids)
    return {i: (float(r), float(c)) for i, (r, c) in zip(ids, coms)}


def centerness_label(inst: InstanceMap, sigma: float = 3.0) -> Field2D:
    """Maximum over instances of an isotropic Gaussian centered on their center of
    mass."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}.")
    rows, cols = np.indices(inst.shape, dtype=np.float64)
    out = np.zeros(inst.shape)
    for r, c in centers_of_mass(inst).values():
        dist2 = (rows - r) ** 2 + (cols - c) ** 2
        np.maximum(out, np.exp(-dist2 / (2 * sigma ** 2)), out=out)
    return Field2D(out)


def offset_label(inst: InstanceMap) -> Field3D:
    """
    Per-cell vector ``(d_row, d_col)`` from the cell to its instance's center of
    mass; zero on background.
    """
    arr = np.asarray(inst)
    rows, cols = np.indices(arr.shape, dtype=np.float64)
    out = np.zeros((2,) + arr.shape)
    for inst_id, (r, c) in centers_of_mass(inst).items():
        mask = arr == inst_id
        out[0][mask] = r - rows[mask]
        out[1][mask] = c - cols[mask]
    return Field3D(out)


def flow_label(inst_t: InstanceMap, inst_t1: InstanceMap) -> Tuple[Field3D, List[int]]:
    """
    Displacement of every instance's center of mass from ``t`` to ``t + 1``,
    painted on its cells at ``t``.

    Returns the flow and the ids present at ``t`` but absent at ``t + 1``; those
    instances carry zero flow.
    """
    if inst_t.shape != inst_t1.shape:
        raise ValueError(f"Shape mismatch: {inst_t.shape} != {inst_t1.shape}.")
    arr = np.asarray(inst_t)
    com_t = centers_of_mass(inst_t)
    com_t1 = centers_of_mass(inst_t1)
    out = np.zeros((2,) + arr.shape)
    absent = []
    for inst_id, (r, c) in com_t.items():
        if inst_id not in com_t1:
            absent.append(inst_id)
            continue
        r1, c1 = com_t1[inst_id]
        mask = arr == inst_id
        out[0][mask] = r1 - r
        out[1][mask] = c1 - c
    if absent:
        warnings.warn(
            f"Instances {absent} are absent at the next step; zero flow used."
        )
    return Field3D(out), absent


def make_labels(
    boxes_per_step: Sequence[Sequence[BevBox]], grid: BevGridSpec, sigma: float = 3.0
) -> List[dict]:
    """
    Build the full label set of a sequence of frames.

    Every entry holds ``segmentation``, ``instances``, ``centerness``, ``offset``
    and ``flow``; the last frame gets zero flow.
    """
    maps = [boxes_to_occupancy(boxes, grid)[1] for boxes in boxes_per_step]
    labels = []
    for t, inst in enumerate(maps):
        if t + 1 < len(maps):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                flow, absent = flow_label(inst, maps[t + 1])
            if absent:
                logger.debug("step %d: instances %s leave the grid", t, absent)
        else:
            flow = Field3D.zeros(2, *inst.shape)
        if inst.is_fragmented():
            warnings.warn(f"Instance map at step {t} is fragmented.")
        labels.append(
            {
                "segmentation": inst.segmentation(),
                "instances": inst,
                "centerness": centerness_label(inst, sigma),
                "offset": offset_label(inst),
                "flow": flow,
            }
        )
    return labels
