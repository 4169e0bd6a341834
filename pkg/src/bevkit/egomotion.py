"""
Rigid ego-motion and alignment of past bird's-eye-view features.

A relative action ``a_t`` maps points expressed in the ego frame at time ``t``
into the ego frame at ``t + 1``. With ``P_t`` the ego-to-world pose,

::

    a_t = inverse(P_{t+1}) @ P_t

so the product ``a_{k-1} @ ... @ a_i`` maps frame ``i`` into the present frame
``k``. Warping uses inverse mapping: the output cell at ego location ``p`` reads
the input at ``T^-1(p)`` with bilinear interpolation and zero padding.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .fields import Field3D, FieldSeq, bilinear_sample_many
from .geometry import BevGridSpec
from .util import as_float_vector, check_finite, ordered_map

ORTHONORMAL_TOL = 1e-9
REPAIR_TOL = 1e-6


def _rotation_error(rotation: np.ndarray) -> float:
    ortho = np.abs(rotation.T @ rotation - np.eye(3)).max()
    return max(ortho, abs(np.linalg.det(rotation) - 1.0))


@dataclass(frozen=True, eq=False)
class SE3Pose:
    """
    A rigid transform ``x -> rotation @ x + translation``.

    Parameters
    ----------
    rotation:
        3x3 rotation matrix; ``R.T @ R = I`` and ``det(R) = 1`` within 1e-9.
    translation:
        translation in meters.
    """

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        if rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got shape {rotation.shape}.")
        check_finite(rotation, "rotation")
        error = _rotation_error(rotation)
        if error > ORTHONORMAL_TOL:
            raise ValueError(
                f"rotation is not a proper rotation matrix (deviation {error:.3g})."
            )
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(
            self, "translation", as_float_vector(self.translation, "translation", 3)
        )

    @classmethod
    def identity(cls) -> "SE3Pose":  # noqa D102
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "SE3Pose":
        """Rotation of ``yaw`` radians about the z axis followed by a translation."""
        rotation = Rotation.from_euler("z", yaw).as_matrix()
        return cls(rotation, np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_rows(cls, values: Sequence[float]) -> "SE3Pose":
        """
        Build a pose from 12 numbers: 9 row-major rotation values then 3
        translation values.

        A rotation that misses the orthonormality invariant by less than 1e-6 is
        projected back onto SO(3) with a warning; larger deviations are rejected.
        """
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (12,):
            raise ValueError(f"Expected 12 pose values, got {values.size}.")
        rotation = values[:9].reshape(3, 3)
        error = _rotation_error(rotation)
        if error > REPAIR_TOL:
            raise ValueError(
                f"rotation deviates from SO(3) by {error:.3g}, more than {REPAIR_TOL}."
            )
        if error > ORTHONORMAL_TOL:
            warnings.warn(f"Re-orthonormalizing rotation (deviation {error:.3g}).")
            rotation = Rotation.from_matrix(rotation).as_matrix()
        return cls(rotation, values[9:])

    def to_rows(self) -> List[float]:
        """Inverse of :meth:`from_rows`."""
        return [float(v) for v in self.rotation.ravel()] + [
            float(v) for v in self.translation
        ]

    @property
    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix."""
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        """Apply the transform to an ``(N, 3)`` array of points."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        """Return ``self @ other``."""
        return se3_compose(self, other)

    def inverse(self) -> "SE3Pose":  # noqa D102
        return se3_inverse(self)


@dataclass(frozen=True)
class SE2Pose:
    """A planar rigid transform; ``yaw`` is kept in ``(-pi, pi]``."""

    yaw: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        for name in ("yaw", "tx", "ty"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"SE2Pose.{name} must be finite.")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))

    def is_identity(self) -> bool:  # noqa D102
        return self.yaw == 0.0 and self.tx == 0.0 and self.ty == 0.0

    def inverse(self) -> "SE2Pose":  # noqa D102
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return SE2Pose(
            -self.yaw, -(c * self.tx + s * self.ty), s * self.tx - c * self.ty
        )

    def apply(self, xs: np.ndarray, ys: np.ndarray):
        """Transform planar points given as coordinate arrays."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return c * xs - s * ys + self.tx, s * xs + c * ys + self.ty


def normalize_angle(angle: float) -> float:
    """Map ``angle`` to ``(-pi, pi]``."""
    wrapped = -((-float(angle) + math.pi) % (2 * math.pi) - math.pi)
    return wrapped


def se3_compose(a: SE3Pose, b: SE3Pose) -> SE3Pose:
    """Return ``a @ b``, i.e. ``(R_a R_b, R_a t_b + t_a)``."""
    rotation = a.rotation @ b.rotation
    # Drift from repeated products would eventually trip the invariant.
    if _rotation_error(rotation) > ORTHONORMAL_TOL:
        rotation = Rotation.from_matrix(rotation).as_matrix()
    return SE3Pose(rotation, a.rotation @ b.translation + a.translation)


def se3_inverse(a: SE3Pose) -> SE3Pose:
    """Return ``(R^T, -R^T t)``."""
    return SE3Pose(a.rotation.T.copy(), -a.rotation.T @ a.translation)


def flatten_to_se2(a: SE3Pose) -> SE2Pose:
    """Project a 3D pose onto the ground plane, dropping z, roll and pitch."""
    yaw = math.atan2(a.rotation[1, 0], a.rotation[0, 0])
    return SE2Pose(yaw, a.translation[0], a.translation[1])


def warp_bev(feature: Field3D, transform: SE2Pose, grid: BevGridSpec) -> Field3D:
    """
    Resample a BeV feature so that content at ego location ``q`` moves to
    ``transform(q)``.

    Every channel is warped identically; cells that read outside the input
    grid are zero.
    """
    feature = feature if isinstance(feature, Field3D) else Field3D(feature)
    if feature.shape[1:] != grid.shape:
        raise ValueError(
            f"Feature of spatial shape {feature.shape[1:]} does not match the "
            f"grid shape {grid.shape}."
        )
    if transform.is_identity():
        return Field3D(np.array(feature))

    rows, cols = np.meshgrid(
        np.arange(grid.height), np.arange(grid.width), indexing="ij"
    )
    xs, ys = grid.cell_to_ego(rows, cols)
    src_x, src_y = transform.inverse().apply(xs, ys)
    src_cols, src_rows = grid.ego_to_cell_coords(src_x, src_y)

    out = np.empty(feature.shape)
    for c in range(feature.channels):
        out[c] = bilinear_sample_many(feature[c], src_cols, src_rows)
    return Field3D(out)


def align_history(
    features: FieldSeq,
    actions: Sequence[SE3Pose],
    grid: BevGridSpec,
    n_threads: int = 1,
) -> FieldSeq:
    """
    Warp every past feature ``x_i`` into the present frame ``k``.

    ``actions`` holds ``a_1 .. a_{k-1}``; ``x_i`` is warped by the planar part
    of ``a_{k-1} @ ... @ a_i`` and the present feature is returned unchanged.
    """
    k = len(features)
    if len(actions) != k - 1:
        raise ValueError(
            f"{k} features need {k - 1} actions, but {len(actions)} were given."
        )
    transforms = [SE2Pose()] * k
    cumulative = SE3Pose.identity()
    for i in range(k - 2, -1, -1):
        cumulative = se3_compose(cumulative, actions[i])
        transforms[i] = flatten_to_se2(cumulative)

    def _warp(i: int) -> Field3D:
        if i == k - 1:
            return features[i]
        return warp_bev(features[i], transforms[i], grid)

    return FieldSeq(ordered_map(_warp, list(range(k)), n_threads))
