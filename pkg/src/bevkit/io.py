"""
Reading and writing bevkit files.

``.bgrid``
    ``b"BGRD"``, then little-endian ``uint32`` version (1), ``C``, ``H``, ``W``,
    then ``C * H * W`` little-endian ``float32`` values, channel-major and
    row-major. Two-dimensional fields are written with ``C = 1``.
JSON lines
    poses (one 12-value list per line), trajectories (``{"o": [...], "a": [...]}``
    per line) and boxes (one list of box records per line).
JSON
    camera rigs, world models and tracking logs.

Payloads are 32-bit on disk and 64-bit in memory.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from .egomotion import SE3Pose
from .fields import Field2D, Field3D
from .geometry import BevGridSpec, Camera, CameraIntrinsics, DepthBins
from .instances import BevBox, InstanceMap
from .probabilistic import LinearGaussianWorldModel, Trajectory
from .util import FormatError, dataclass_from_dict

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

BGRID_MAGIC = b"BGRD"
BGRID_VERSION = 1
_HEADER = np.dtype([("version", "<u4"), ("c", "<u4"), ("h", "<u4"), ("w", "<u4")])


def encode_bgrid(data) -> bytes:
    """Serialise a 2D or 3D grid to ``.bgrid`` bytes."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ValueError(f"Only 2D and 3D grids can be written, got shape {arr.shape}.")
    if not np.all(np.isfinite(arr)):
        raise ValueError("Grids written to disk must be finite.")
    header = np.array([(BGRID_VERSION,) + arr.shape], dtype=_HEADER)
    return BGRID_MAGIC + header.tobytes() + arr.astype("<f4").tobytes(order="C")


def decode_bgrid(raw: bytes, source: str = "<bytes>") -> Field3D:
    """Parse ``.bgrid`` bytes; ``source`` names the origin in error messages."""
    if raw[:4] != BGRID_MAGIC:
        raise FormatError(f"{source}: bad magic {raw[:4]!r}, expected {BGRID_MAGIC!r}.")
    if len(raw) < 4 + _HEADER.itemsize:
        raise FormatError(f"{source}: truncated header.")
    header = np.frombuffer(raw, dtype=_HEADER, count=1, offset=4)[0]
    if header["version"] != BGRID_VERSION:
        raise FormatError(f"{source}: unsupported version {int(header['version'])}.")
    shape = (int(header["c"]), int(header["h"]), int(header["w"]))
    n_values = shape[0] * shape[1] * shape[2]
    payload = raw[4 + _HEADER.itemsize :]
    if len(payload) != 4 * n_values:
        raise FormatError(
            f"{source}: expected {4 * n_values} payload bytes for shape {shape}, "
            f"found {len(payload)}."
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{source}: payload contains non-finite values.")
    return Field3D(values)


def write_bgrid(path: PathLike, data) -> None:  # noqa D103
    raw = encode_bgrid(data)
    Path(path).write_bytes(raw)
    logger.debug("wrote %s (%d bytes)", path, len(raw))


def read_bgrid(path: PathLike) -> Field3D:
    """Read a ``.bgrid`` file into a ``Field3D``."""
    grid = decode_bgrid(Path(path).read_bytes(), str(path))
    logger.debug("read %s with shape %s", path, grid.shape)
    return grid


def read_field2d(path: PathLike) -> Field2D:
    """Read a single-channel ``.bgrid`` file."""
    grid = read_bgrid(path)
    if grid.shape[0] != 1:
        raise FormatError(f"{path}: expected one channel, found {grid.shape[0]}.")
    return Field2D(np.asarray(grid)[0])


def write_instance_map(path: PathLike, inst: InstanceMap) -> None:
    """Write instance ids as a single integer-valued channel."""
    if inst.size and int(np.max(inst)) >= 2 ** 24:
        raise ValueError("Instance ids above 2**24 are not representable in float32.")
    write_bgrid(path, inst.to_field())


def read_instance_map(path: PathLike) -> InstanceMap:  # noqa D103
    field2d = read_field2d(path)
    try:
        return InstanceMap(field2d)
    except ValueError as err:
        raise FormatError(f"{path}: {err}")


def _read_json(path: PathLike):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON ({err}).")


def _write_json(path: PathLike, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _read_json_lines(path: PathLike) -> List:
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as err:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({err}).")
    return records


def _write_json_lines(path: PathLike, records: Iterable) -> None:
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass(frozen=True, eq=False)
class Rig:
    """A camera rig with the depth bins and BeV grid it is used with."""

    cameras: List[Camera]
    bins: DepthBins = field(default_factory=DepthBins)
    grid: BevGridSpec = field(default_factory=BevGridSpec)


def _camera_to_dict(cam: Camera) -> dict:
    intr = cam.intrinsics
    return {
        "intrinsics": {
            "fx": intr.fx,
            "fy": intr.fy,
            "cx": intr.cx,
            "cy": intr.cy,
            "image_w": intr.image_w,
            "image_h": intr.image_h,
            "feature_stride": intr.feature_stride,
        },
        "extrinsics": {
            "rotation": cam.cam_to_ego.rotation.tolist(),
            "translation": cam.cam_to_ego.translation.tolist(),
        },
    }


def rig_to_dict(rig: Rig) -> dict:  # noqa D103
    return {
        "cameras": [_camera_to_dict(cam) for cam in rig.cameras],
        "bins": {
            "dmin": rig.bins.d_min,
            "dmax": rig.bins.d_max,
            "dsize": rig.bins.d_size,
        },
        "grid": {
            "extent": rig.grid.extent_x,
            "resolution": rig.grid.resolution,
        },
    }


def rig_from_dict(data: dict, source: str = "<rig>") -> Rig:
    """Inverse of :func:`rig_to_dict`; every field is checked."""
    try:
        unknown = set(data) - {"cameras", "bins", "grid"}
        if unknown:
            raise ValueError(
                f"Unknown configuration key(s): {', '.join(sorted(unknown))}"
            )
        cameras = []
        for entry in data["cameras"]:
            extr = entry["extrinsics"]
            rows = list(np.ravel(extr["rotation"])) + list(extr["translation"])
            cameras.append(
                Camera(
                    dataclass_from_dict(
                        CameraIntrinsics, entry["intrinsics"], "intrinsics"
                    ),
                    SE3Pose.from_rows(rows),
                )
            )
        bins = data.get("bins", {"dmin": 2.0, "dmax": 50.0, "dsize": 1.0})
        grid = data.get("grid", {"extent": 100.0, "resolution": 0.5})
        return Rig(
            cameras,
            DepthBins(bins["dmin"], bins["dmax"], bins["dsize"]),
            BevGridSpec(grid["extent"], grid["extent"], grid["resolution"]),
        )
    except KeyError as err:
        raise FormatError(f"{source}: missing field {err}.")
    except (TypeError, ValueError) as err:
        raise FormatError(f"{source}: {err}")


def write_rig(path: PathLike, rig: Rig) -> None:  # noqa D103
    _write_json(path, rig_to_dict(rig))


def read_rig(path: PathLike) -> Rig:  # noqa D103
    return rig_from_dict(_read_json(path), str(path))


def write_poses(path: PathLike, poses: Sequence[SE3Pose]) -> None:
    """One pose per line as 9 row-major rotation values and 3 translation values."""
    _write_json_lines(path, (pose.to_rows() for pose in poses))


def read_poses(path: PathLike) -> List[SE3Pose]:  # noqa D103
    poses = []
    for t, record in enumerate(_read_json_lines(path)):
        try:
            poses.append(SE3Pose.from_rows(record))
        except (TypeError, ValueError) as err:
            raise FormatError(f"{path}: pose {t}: {err}")
    return poses


_MODEL_KEYS = {
    "A": "transition_matrix",
    "B": "action_matrix",
    "G": "observation_matrix",
    "Pi": "policy_matrix",
    "transition_std": "transition_std",
    "obs_std": "obs_std",
    "action_std": "action_std",
}


def model_to_dict(model: LinearGaussianWorldModel) -> dict:  # noqa D103
    return {
        key: np.asarray(getattr(model, attr)).tolist()
        for key, attr in _MODEL_KEYS.items()
    }


def model_from_dict(data: dict, source: str = "<model>") -> LinearGaussianWorldModel:
    """
    Build a world model from ``A``, ``B``, ``G``, ``Pi`` (row-major nested lists)
    and the three std vectors.
    """
    unknown = set(data) - set(_MODEL_KEYS)
    missing = set(_MODEL_KEYS) - set(data)
    if unknown:
        raise FormatError(f"{source}: unknown model key(s) {sorted(unknown)}.")
    if missing:
        raise FormatError(f"{source}: missing model key(s) {sorted(missing)}.")
    try:
        return LinearGaussianWorldModel(
            **{attr: data[key] for key, attr in _MODEL_KEYS.items()}
        )
    except (TypeError, ValueError) as err:
        raise FormatError(f"{source}: {err}")


def write_model(path: PathLike, model: LinearGaussianWorldModel) -> None:  # noqa D103
    _write_json(path, model_to_dict(model))


def read_model(path: PathLike) -> LinearGaussianWorldModel:  # noqa D103
    return model_from_dict(_read_json(path), str(path))


def write_trajectory(path: PathLike, traj: Trajectory) -> None:  # noqa D103
    _write_json_lines(
        path,
        (
            {"o": o.tolist(), "a": a.tolist()}
            for o, a in zip(traj.observations, traj.actions)
        ),
    )


def read_trajectory(path: PathLike) -> Trajectory:  # noqa D103
    records = _read_json_lines(path)
    try:
        obs = [r["o"] for r in records]
        actions = [r["a"] for r in records]
        if not actions or all(len(a) == 0 for a in actions):
            actions = np.zeros((len(obs), 0))
        return Trajectory(obs, actions)
    except KeyError as err:
        raise FormatError(f"{path}: missing field {err}.")
    except (TypeError, ValueError) as err:
        raise FormatError(f"{path}: {err}")


def write_boxes(path: PathLike, boxes_per_step: Sequence[Sequence[BevBox]]) -> None:
    """One line per step holding the list of that step's boxes."""
    _write_json_lines(
        path, ([box.to_dict() for box in boxes] for boxes in boxes_per_step)
    )


def read_boxes(path: PathLike) -> List[List[BevBox]]:  # noqa D103
    out = []
    for t, records in enumerate(_read_json_lines(path)):
        try:
            out.append([dataclass_from_dict(BevBox, r, "box") for r in records])
        except (TypeError, ValueError) as err:
            raise FormatError(f"{path}: step {t}: {err}")
    return out


def write_match_log(path: PathLike, records: Sequence) -> None:
    """Write tracking records (anything with ``to_dict``) as a JSON list."""
    _write_json(path, [r.to_dict() for r in records])


def read_json(path: PathLike):  # noqa D103
    return _read_json(path)


def write_json(path: PathLike, data) -> None:  # noqa D103
    _write_json(path, data)


def write_pgm(field2d, path: PathLike, vmin: float, vmax: float) -> None:
    """
    Write an 8-bit binary PGM image.

    Values map linearly from ``[vmin, vmax]`` to ``[0, 255]``, rounding halves up
    and clamping outside the range.
    """
    if not vmax > vmin:
        raise ValueError(f"vmax must exceed vmin, got {vmin} and {vmax}.")
    values = np.asarray(field2d, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"Only 2D fields can be written as PGM, got {values.shape}.")
    scaled = np.floor((values - vmin) / (vmax - vmin) * 255 + 0.5)
    pixels = np.clip(scaled, 0, 255).astype(np.uint8)
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())
