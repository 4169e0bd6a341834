"""
Lifting camera features into 3D and splatting them onto a bird's-eye-view grid.

Camera frames follow the pinhole convention: x right, y down, z forward along the
optical axis. Feature pixel ``(u, v)`` (column, row) at output stride ``s`` has
its center at full-resolution pixel ``((u + 0.5) s, (v + 0.5) s)``, and depth bin
``d`` is represented by its center ``d_min + (d + 0.5) d_size``.

Grid indexing
^^^^^^^^^^^^^

For a grid of ``H`` rows and ``W`` columns at resolution ``res``, cell
``(i, j)`` covers

::

    x in [(j - W/2) res, (j - W/2 + 1) res)
    y in [(i - H/2) res, (i - H/2 + 1) res)

so the ego origin sits on the corner shared by the four central cells and falls
into cell ``(H/2, W/2)``. Points on a boundary belong to the cell with the larger
index.
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence, Tuple

import numpy as np

from .fields import Field3D, softmax
from .util import check_finite, ordered_map

if TYPE_CHECKING:
    from .egomotion import SE3Pose


def _integer_ratio(numerator: float, denominator: float, name: str) -> int:
    ratio = numerator / denominator
    count = int(round(ratio))
    if count < 1 or abs(ratio - count) > 1e-9:
        raise ValueError(f"{name} must be a positive integer, got {ratio}.")
    return count


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels plus the stride of the feature map."""

    fx: float
    fy: float
    cx: float
    cy: float
    image_w: int
    image_h: int
    feature_stride: int = 8

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(
                f"Focal lengths must be positive, got {self.fx}, {self.fy}."
            )
        if self.feature_stride < 1:
            raise ValueError(f"feature_stride must be >= 1, got {self.feature_stride}.")
        if self.image_w % self.feature_stride or self.image_h % self.feature_stride:
            raise ValueError(
                f"Image size {self.image_w}x{self.image_h} is not divisible by the "
                f"feature stride {self.feature_stride}."
            )

    @property
    def feature_width(self) -> int:  # noqa D102
        return self.image_w // self.feature_stride

    @property
    def feature_height(self) -> int:  # noqa D102
        return self.image_h // self.feature_stride

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Project ``(N, 3)`` camera-frame points to full-resolution pixels."""
        points = np.asarray(points, dtype=np.float64)
        z = points[:, 2]
        u = self.fx * points[:, 0] / z + self.cx
        return u, self.fy * points[:, 1] / z + self.cy


@dataclass(frozen=True)
class DepthBins:
    """Uniform depth discretisation ``[d_min, d_max)`` in slices of ``d_size``."""

    d_min: float = 2.0
    d_max: float = 50.0
    d_size: float = 1.0

    def __post_init__(self):
        if not (self.d_max > self.d_min > 0):
            raise ValueError(
                f"Depth bins need d_max > d_min > 0, got {self.d_min}, {self.d_max}."
            )
        if self.d_size <= 0:
            raise ValueError(f"d_size must be positive, got {self.d_size}.")
        _integer_ratio(self.d_max - self.d_min, self.d_size, "(d_max - d_min) / d_size")

    @property
    def count(self) -> int:
        """Number of bins ``D``."""
        return _integer_ratio(self.d_max - self.d_min, self.d_size, "D")

    @property
    def centers(self) -> np.ndarray:  # noqa D102
        return self.d_min + (np.arange(self.count) + 0.5) * self.d_size

    def index_of(self, depth: np.ndarray) -> np.ndarray:
        """Bin index containing each depth, ``-1`` outside ``[d_min, d_max)``."""
        depth = np.asarray(depth, dtype=np.float64)
        finite = np.isfinite(depth)
        depth = np.where(finite, depth, self.d_min - 1.0)
        valid = finite & (depth >= self.d_min) & (depth < self.d_max)
        scaled = np.where(valid, (depth - self.d_min) / self.d_size, -1.0)
        idx = np.floor(scaled).astype(np.int64)
        return np.where(valid & (idx < self.count), idx, -1)


@dataclass(frozen=True)
class BevGridSpec:
    """
    A bird's-eye-view grid centered on the ego vehicle.

    The defaults give the 100 m x 100 m grid of 0.5 m cells, i.e. 200 x 200.
    """

    extent_x: float = 100.0
    extent_y: float = 100.0
    resolution: float = 0.5

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}.")
        _integer_ratio(self.extent_x, self.resolution, "extent_x / resolution")
        _integer_ratio(self.extent_y, self.resolution, "extent_y / resolution")

    @property
    def width(self) -> int:
        """Number of columns (x axis)."""
        return _integer_ratio(self.extent_x, self.resolution, "W")

    @property
    def height(self) -> int:
        """Number of rows (y axis)."""
        return _integer_ratio(self.extent_y, self.resolution, "H")

    @property
    def shape(self) -> Tuple[int, int]:  # noqa D102
        return self.height, self.width

    def ego_to_cell_coords(self, xs, ys) -> Tuple[np.ndarray, np.ndarray]:
        """Continuous ``(col, row)`` coordinates where integers are cell centers."""
        cols = np.asarray(xs) / self.resolution + self.width / 2 - 0.5
        rows = np.asarray(ys) / self.resolution + self.height / 2 - 0.5
        return cols, rows

    def cell_to_ego(self, rows, cols) -> Tuple[np.ndarray, np.ndarray]:
        """Ego ``(x, y)`` of cell centers."""
        xs = (np.asarray(cols) - self.width / 2 + 0.5) * self.resolution
        ys = (np.asarray(rows) - self.height / 2 + 0.5) * self.resolution
        return xs, ys

    def cell_index(self, xs, ys) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Return ``(rows, cols, inside)`` for ego points; ``inside`` flags points
        within the grid extent.
        """
        cols = np.floor(np.asarray(xs) / self.resolution + self.width / 2)
        rows = np.floor(np.asarray(ys) / self.resolution + self.height / 2)
        inside = (cols >= 0) & (cols < self.width) & (rows >= 0) & (rows < self.height)
        return rows.astype(np.int64), cols.astype(np.int64), inside


@dataclass(frozen=True, eq=False)
class Camera:
    """One entry of a camera rig: intrinsics and the camera-to-ego transform."""

    intrinsics: CameraIntrinsics
    cam_to_ego: "SE3Pose"


@dataclass(frozen=True, eq=False)
class CameraFeature:
    """
    Per-camera features split into ``C`` content channels and ``D`` depth logits
    over the same ``(H_e, W_e)`` feature grid.
    """

    content: Field3D
    depth_logits: Field3D

    def __post_init__(self):
        content = Field3D(self.content)
        depth_logits = Field3D(self.depth_logits)
        if content.shape[1:] != depth_logits.shape[1:]:
            raise ValueError(
                f"content {content.shape} and depth_logits {depth_logits.shape} must "
                f"share their spatial shape."
            )
        object.__setattr__(self, "content", content)
        object.__setattr__(self, "depth_logits", depth_logits)


@dataclass(frozen=True, eq=False)
class LiftedFeature:
    """
    Outer product of content and depth probabilities.

    ``tensor`` has shape ``(C, D, H_e, W_e)`` and ``points`` holds the
    camera-frame 3D point of every ``(d, v, u)`` as a ``(D, H_e, W_e, 3)`` array.
    """

    tensor: np.ndarray
    points: np.ndarray


def frustum_points(intr: CameraIntrinsics, bins: DepthBins) -> np.ndarray:
    """
    Return the ``(D, H_e, W_e, 3)`` camera-frame points of every feature pixel
    at every depth-bin center.
    """
    s = intr.feature_stride
    us = np.arange(intr.feature_width) * s + s / 2
    vs = np.arange(intr.feature_height) * s + s / 2
    z = bins.centers[:, None, None]
    x = (us[None, None, :] - intr.cx) * z / intr.fx
    y = (vs[None, :, None] - intr.cy) * z / intr.fy
    shape = (bins.count, intr.feature_height, intr.feature_width)
    return np.stack([np.broadcast_to(v, shape) for v in (x, y, z)], axis=-1)


def lift_features(
    feat: CameraFeature, intr: CameraIntrinsics, bins: DepthBins
) -> LiftedFeature:
    """
    Lift camera features to 3D: ``u[c, d] = content[c] * softmax(logits)[d]``.

    Summing the result over ``d`` recovers ``content``.
    """
    expected = (intr.feature_height, intr.feature_width)
    if feat.content.shape[1:] != expected:
        raise ValueError(
            f"Feature grid {feat.content.shape[1:]} does not match the camera's "
            f"feature grid {expected}."
        )
    if feat.depth_logits.shape[0] != bins.count:
        raise ValueError(
            f"Expected {bins.count} depth logits per pixel, got "
            f"{feat.depth_logits.shape[0]}."
        )
    probs = softmax(np.asarray(feat.depth_logits), axis=0)
    tensor = np.asarray(feat.content)[:, None, :, :] * probs[None, :, :, :]
    check_finite(tensor, "lifted feature")
    return LiftedFeature(tensor=tensor, points=frustum_points(intr, bins))


def splat_to_bev(
    lifted: LiftedFeature, cam_to_ego: "SE3Pose", grid: BevGridSpec
) -> Field3D:
    """
    Sum-pool lifted features into the BeV grid.

    Points are moved to the ego frame, their height is ignored and points
    outside the grid extent are dropped.
    """
    n_channels = lifted.tensor.shape[0]
    ego = cam_to_ego.transform_points(lifted.points.reshape(-1, 3))
    rows, cols, inside = grid.cell_index(ego[:, 0], ego[:, 1])
    flat_idx = rows[inside] * grid.width + cols[inside]
    values = lifted.tensor.reshape(n_channels, -1)[:, inside]

    n_cells = grid.height * grid.width
    out = np.empty((n_channels, n_cells))
    for c in range(n_channels):
        out[c] = np.bincount(flat_idx, weights=values[c], minlength=n_cells)
    return Field3D(out.reshape(n_channels, grid.height, grid.width))


def encode_observation(
    cams: Sequence[Tuple[CameraFeature, Camera]],
    bins: DepthBins,
    grid: BevGridSpec,
    n_threads: int = 1,
) -> Field3D:
    """
    Sum the BeV splats of several cameras.

    Each camera is lifted and splatted independently (optionally in parallel);
    the splats are then added in the listed camera order.
    """
    if len(cams) == 0:
        raise ValueError("encode_observation needs at least one camera.")
    n_channels = {feat.content.shape[0] for feat, _ in cams}
    if len(n_channels) != 1:
        raise ValueError(
            f"All cameras must have the same number of channels, got {n_channels}."
        )

    def _splat(item):
        feat, cam = item
        lifted = lift_features(feat, cam.intrinsics, bins)
        return splat_to_bev(lifted, cam.cam_to_ego, grid)

    splats = ordered_map(_splat, list(cams), n_threads)
    total = np.zeros_like(np.asarray(splats[0]))
    for splat in splats:
        total += np.asarray(splat)
    return Field3D(total)
