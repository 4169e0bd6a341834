"""
Synthetic planar driving scenes with exact ground truth.

The ego vehicle and every other vehicle follow constant-speed, constant-yaw-rate
(unicycle) motion on the ground plane. The ego frame has x forward, y left and
z up. Cameras see vehicles as vertical slabs of fixed height, rendered into
one-hot depth logits so that lifting and splatting can be checked against the
true footprints.

Bundle layout
^^^^^^^^^^^^^

::

    scene.json                  scene configuration, rig and channel counts
    poses.jsonl                 ego-to-world pose per step
    boxes.jsonl                 ego-frame boxes per step
    cams/t{t:03d}_c{c}.bgrid    content channels followed by depth logits
    labels/t{t:03d}_{name}.bgrid
                                segmentation, instances, centerness, offset, flow
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import io
from .egomotion import SE3Pose, normalize_angle
from .fields import Field3D
from .geometry import BevGridSpec, Camera, CameraFeature, CameraIntrinsics, DepthBins
from .instances import BevBox, make_labels
from .util import FormatError, dataclass_from_dict, get_rng, ordered_map

logger = logging.getLogger(__name__)

VEHICLE_HEIGHT = 1.5
SAMPLE_SPACING = 0.1
HOT_LOGIT = 50.0

LABEL_NAMES = ("segmentation", "instances", "centerness", "offset", "flow")

# camera axes (right, down, forward) expressed in the ego frame
_CAMERA_BASE = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class VehicleConfig:
    """Initial world pose and unicycle controls of one vehicle."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    speed: float = 0.0
    yaw_rate: float = 0.0
    length: float = 4.5
    width: float = 2.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise ValueError(f"VehicleConfig.{name} must be finite.")
        if self.length <= 0 or self.width <= 0:
            raise ValueError("Vehicle dimensions must be positive.")

    def pose_at(self, t: float) -> Tuple[float, float, float]:
        """Closed-form ``(x, y, yaw)`` after ``t`` seconds."""
        v, w = self.speed, self.yaw_rate
        if abs(w) < 1e-12:
            return (
                self.x + v * t * math.cos(self.yaw),
                self.y + v * t * math.sin(self.yaw),
                self.yaw,
            )
        yaw = self.yaw + w * t
        return (
            self.x + v / w * (math.sin(yaw) - math.sin(self.yaw)),
            self.y - v / w * (math.cos(yaw) - math.cos(self.yaw)),
            yaw,
        )


def camera_at_yaw(
    yaw: float,
    intrinsics: CameraIntrinsics,
    translation: Sequence[float] = (0.0, 0.0, VEHICLE_HEIGHT),
) -> Camera:
    """A level camera looking along ego heading ``yaw``."""
    rotation = SE3Pose.from_yaw(yaw).rotation @ _CAMERA_BASE
    return Camera(intrinsics, SE3Pose(rotation, np.asarray(translation, dtype=float)))


def default_rig(
    n_cameras: int = 6, feature_stride: int = 8, bins: Optional[DepthBins] = None
) -> io.Rig:
    """Evenly spread cameras at 1.5 m height with overlapping fields of view."""
    intrinsics = CameraIntrinsics(
        fx=320.0,
        fy=320.0,
        cx=240.0,
        cy=112.0,
        image_w=480,
        image_h=224,
        feature_stride=feature_stride,
    )
    cameras = [
        camera_at_yaw(2 * math.pi * k / n_cameras, intrinsics) for k in range(n_cameras)
    ]
    return io.Rig(cameras, DepthBins() if bins is None else bins, BevGridSpec())


@dataclass(frozen=True, eq=False)
class SceneConfig:
    """
    Everything needed to simulate and render a scene.

    ``horizon`` is the number of steps after the first, so a scene has
    ``horizon + 1`` frames.
    """

    seed: int = 0
    vehicles: Tuple[VehicleConfig, ...] = ()
    ego: VehicleConfig = field(default_factory=VehicleConfig)
    dt: float = 0.5
    horizon: int = 6
    world_extent: float = 100.0
    channels: int = 1
    rig: io.Rig = field(default_factory=default_rig)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}.")
        if self.horizon < 1:
            raise ValueError(f"horizon must be at least 1, got {self.horizon}.")
        if self.channels < 1:
            raise ValueError(f"channels must be at least 1, got {self.channels}.")
        object.__setattr__(self, "vehicles", tuple(self.vehicles))

    @property
    def num_vehicles(self) -> int:  # noqa D102
        return len(self.vehicles)

    @classmethod
    def random(
        cls,
        seed: int,
        num_vehicles: int = 3,
        horizon: int = 6,
        dt: float = 0.5,
        world_extent: float = 80.0,
        min_separation: float = 10.0,
        max_speed: float = 3.0,
        rig: Optional[io.Rig] = None,
        max_tries: int = 10000,
    ) -> "SceneConfig":
        """
        Draw a scene whose vehicles stay at least ``min_separation`` meters
        apart (and from the ego vehicle) at every step.
        """
        rng = get_rng(seed)
        ego = VehicleConfig(
            speed=float(rng.uniform(0.0, max_speed)),
            yaw_rate=float(rng.uniform(-0.05, 0.05)),
        )
        times = np.arange(horizon + 1) * dt
        accepted = [ego]
        tries = 0
        while len(accepted) < num_vehicles + 1:
            tries += 1
            if tries > max_tries:
                raise ValueError(
                    f"Could not place {num_vehicles} vehicles {min_separation} m apart "
                    f"within {world_extent} m."
                )
            candidate = VehicleConfig(
                x=float(rng.uniform(-world_extent / 2, world_extent / 2)),
                y=float(rng.uniform(-world_extent / 2, world_extent / 2)),
                yaw=float(rng.uniform(-math.pi, math.pi)),
                speed=float(rng.uniform(0.0, max_speed)),
                yaw_rate=float(rng.uniform(-0.1, 0.1)),
            )
            if all(
                _min_distance(candidate, other, times) >= min_separation
                for other in accepted
            ):
                accepted.append(candidate)
        kwargs = {} if rig is None else {"rig": rig}
        return cls(
            seed=seed,
            vehicles=tuple(accepted[1:]),
            ego=ego,
            dt=dt,
            horizon=horizon,
            world_extent=world_extent,
            **kwargs,
        )

    def to_dict(self) -> dict:  # noqa D102
        return {
            "seed": self.seed,
            "vehicles": [asdict(v) for v in self.vehicles],
            "ego": asdict(self.ego),
            "dt": self.dt,
            "horizon": self.horizon,
            "world_extent": self.world_extent,
            "channels": self.channels,
            "rig": io.rig_to_dict(self.rig),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        """Inverse of :meth:`to_dict`; unknown keys are rejected."""
        data = dict(data)
        vehicles = tuple(
            dataclass_from_dict(VehicleConfig, v, "vehicle")
            for v in data.pop("vehicles", [])
        )
        ego = dataclass_from_dict(VehicleConfig, data.pop("ego", {}), "ego")
        rig = io.rig_from_dict(data.pop("rig")) if "rig" in data else default_rig()
        return dataclass_from_dict(cls, dict(data, vehicles=vehicles, ego=ego, rig=rig))


def _min_distance(a: VehicleConfig, b: VehicleConfig, times) -> float:
    return min(
        math.hypot(pa[0] - pb[0], pa[1] - pb[1])
        for pa, pb in ((a.pose_at(t), b.pose_at(t)) for t in times)
    )


@dataclass(frozen=True, eq=False)
class SceneTimeline:
    """
    Simulated ground truth.

    ``actions[t]`` maps the ego frame at ``t`` into the ego frame at ``t + 1``.
    """

    boxes: List[List[BevBox]]
    poses: List[SE3Pose]
    actions: List[SE3Pose]

    def __len__(self) -> int:
        return len(self.poses)


def relative_actions(poses: Sequence[SE3Pose]) -> List[SE3Pose]:
    """``a_t = inverse(P_{t+1}) @ P_t`` for consecutive ego-to-world poses."""
    return [poses[t + 1].inverse().compose(poses[t]) for t in range(len(poses) - 1)]


def simulate(config: SceneConfig) -> SceneTimeline:
    """Integrate every vehicle and express the boxes in each step's ego frame."""
    poses, boxes = [], []
    for t in range(config.horizon + 1):
        time = t * config.dt
        ex, ey, eyaw = config.ego.pose_at(time)
        pose = SE3Pose.from_yaw(eyaw, (ex, ey, 0.0))
        world_to_ego = pose.inverse()
        step_boxes = []
        for k, vehicle in enumerate(config.vehicles):
            vx, vy, vyaw = vehicle.pose_at(time)
            center = world_to_ego.transform_points(np.array([[vx, vy, 0.0]]))[0]
            step_boxes.append(
                BevBox(
                    center_x=float(center[0]),
                    center_y=float(center[1]),
                    length=vehicle.length,
                    width=vehicle.width,
                    yaw=normalize_angle(vyaw - eyaw),
                    instance_id=k + 1,
                )
            )
        poses.append(pose)
        boxes.append(step_boxes)
    return SceneTimeline(boxes, poses, relative_actions(poses))


def _face_points(box: BevBox, height: float, spacing: float) -> np.ndarray:
    corners = box.corners()
    zs = np.linspace(0.0, height, int(math.ceil(height / spacing)) + 1)
    faces = []
    for a, b in zip(corners, np.roll(corners, -1, axis=0)):
        n = int(math.ceil(np.linalg.norm(b - a) / spacing)) + 1
        s = np.linspace(0.0, 1.0, n)[:, None]
        edge = a + s * (b - a)
        xy = np.repeat(edge, len(zs), axis=0)
        z = np.tile(zs, len(edge))[:, None]
        faces.append(np.hstack([xy, z]))
    return np.vstack(faces)


def render_depth_camera(
    boxes: Sequence[BevBox],
    cam: Camera,
    bins: DepthBins,
    channels: int = 1,
    height: float = VEHICLE_HEIGHT,
    spacing: float = SAMPLE_SPACING,
) -> CameraFeature:
    """
    Render an ideal camera feature.

    Face points of every box are z-buffered per feature pixel. A pixel whose
    nearest depth falls in ``bins`` gets unit content and logits one-hot at
    that bin; every other pixel gets zero content and uniform (zero) logits.
    """
    intr = cam.intrinsics
    shape = (intr.feature_height, intr.feature_width)
    nearest = np.full(shape[0] * shape[1], np.inf)
    if boxes:
        points = np.vstack([_face_points(box, height, spacing) for box in boxes])
        in_cam = cam.cam_to_ego.inverse().transform_points(points)
        in_cam = in_cam[in_cam[:, 2] > 1e-6]
        u, v = intr.project(in_cam)
        cols = np.floor(u / intr.feature_stride).astype(np.int64)
        rows = np.floor(v / intr.feature_stride).astype(np.int64)
        inside = (cols >= 0) & (cols < shape[1]) & (rows >= 0) & (rows < shape[0])
        flat = rows[inside] * shape[1] + cols[inside]
        np.minimum.at(nearest, flat, in_cam[inside, 2])

    bin_idx = bins.index_of(nearest)
    occupied = np.isfinite(nearest) & (bin_idx >= 0)
    content = np.zeros((channels, shape[0] * shape[1]))
    content[:, occupied] = 1.0
    logits = np.zeros((bins.count, shape[0] * shape[1]))
    logits[bin_idx[occupied], np.nonzero(occupied)[0]] = HOT_LOGIT
    return CameraFeature(
        Field3D(content.reshape((channels,) + shape)),
        Field3D(logits.reshape((bins.count,) + shape)),
    )


@dataclass(frozen=True, eq=False)
class Dataset:
    """A simulated scene with its camera features and BeV labels."""

    config: SceneConfig
    timeline: SceneTimeline
    cameras: List[List[CameraFeature]]
    labels: List[dict]

    @property
    def rig(self) -> io.Rig:  # noqa D102
        return self.config.rig


def build_dataset(config: SceneConfig, n_threads: int = 1) -> Dataset:
    """Simulate, render every camera at every step and derive the labels."""
    timeline = simulate(config)
    rig = config.rig

    def _render(boxes):
        return [
            render_depth_camera(boxes, cam, rig.bins, config.channels)
            for cam in rig.cameras
        ]

    cameras = ordered_map(_render, timeline.boxes, n_threads)
    labels = make_labels(timeline.boxes, rig.grid)
    return Dataset(config, timeline, cameras, labels)


def camera_path(root: Path, t: int, c: int) -> Path:  # noqa D103
    return root / "cams" / f"t{t:03d}_c{c}.bgrid"


def label_path(root: Path, t: int, name: str) -> Path:  # noqa D103
    return root / "labels" / f"t{t:03d}_{name}.bgrid"


def make_dataset(config: SceneConfig, out_dir, n_threads: int = 1) -> Dataset:
    """Build a dataset and write it as a bundle under ``out_dir``."""
    dataset = build_dataset(config, n_threads)
    root = Path(out_dir)
    try:
        (root / "cams").mkdir(parents=True, exist_ok=True)
        (root / "labels").mkdir(parents=True, exist_ok=True)
        io.write_json(root / "scene.json", config.to_dict())
        io.write_poses(root / "poses.jsonl", dataset.timeline.poses)
        io.write_boxes(root / "boxes.jsonl", dataset.timeline.boxes)
        for t, step in enumerate(dataset.cameras):
            for c, feat in enumerate(step):
                stacked = np.concatenate(
                    [np.asarray(feat.content), np.asarray(feat.depth_logits)]
                )
                io.write_bgrid(camera_path(root, t, c), stacked)
        for t, labels in enumerate(dataset.labels):
            for name in LABEL_NAMES:
                if name == "instances":
                    io.write_instance_map(label_path(root, t, name), labels[name])
                else:
                    io.write_bgrid(label_path(root, t, name), labels[name])
    except OSError as err:
        raise OSError(f"Could not write bundle to {root}: {err}") from err
    logger.info(
        "wrote %d steps, %d cameras and %d vehicles to %s",
        len(dataset.timeline),
        len(config.rig.cameras),
        config.num_vehicles,
        root,
    )
    return dataset


def load_dataset(path) -> Dataset:
    """Read a bundle written by :func:`make_dataset`."""
    root = Path(path)
    if not (root / "scene.json").exists():
        raise FormatError(f"{root}: not a bundle (scene.json is missing).")
    try:
        config = SceneConfig.from_dict(io.read_json(root / "scene.json"))
    except (TypeError, ValueError) as err:
        raise FormatError(f"{root / 'scene.json'}: {err}")
    poses = io.read_poses(root / "poses.jsonl")
    boxes = io.read_boxes(root / "boxes.jsonl")
    if len(poses) != config.horizon + 1 or len(boxes) != config.horizon + 1:
        raise FormatError(
            f"{root}: expected {config.horizon + 1} steps, found {len(poses)} poses "
            f"and {len(boxes)} box lists."
        )
    timeline = SceneTimeline(boxes, poses, relative_actions(poses))

    cameras = []
    for t in range(len(poses)):
        step = []
        for c in range(len(config.rig.cameras)):
            stacked = np.asarray(io.read_bgrid(camera_path(root, t, c)))
            if stacked.shape[0] != config.channels + config.rig.bins.count:
                raise FormatError(
                    f"{camera_path(root, t, c)}: expected "
                    f"{config.channels + config.rig.bins.count} channels, found "
                    f"{stacked.shape[0]}."
                )
            step.append(
                CameraFeature(
                    Field3D(stacked[: config.channels]),
                    Field3D(stacked[config.channels :]),
                )
            )
        cameras.append(step)

    labels = []
    for t in range(len(poses)):
        entry = {}
        for name in LABEL_NAMES:
            if name == "instances":
                entry[name] = io.read_instance_map(label_path(root, t, name))
            elif name in ("segmentation", "centerness"):
                entry[name] = io.read_field2d(label_path(root, t, name))
            else:
                entry[name] = io.read_bgrid(label_path(root, t, name))
        labels.append(entry)
    return Dataset(config, timeline, cameras, labels)
