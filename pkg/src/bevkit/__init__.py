from .config import RunConfig
from .egomotion import (
    SE2Pose,
    SE3Pose,
    align_history,
    flatten_to_se2,
    se3_compose,
    se3_inverse,
    warp_bev,
)
from .fields import Field2D, Field3D, FieldSeq, bilinear_sample, softmax
from .geometry import (
    BevGridSpec,
    Camera,
    CameraFeature,
    CameraIntrinsics,
    DepthBins,
    encode_observation,
    lift_features,
    splat_to_bev,
)
from .instances import (
    BevBox,
    DecodeParams,
    InstanceMap,
    boxes_to_occupancy,
    centerness_label,
    flow_label,
    offset_label,
)
from .losses import LossWeights, control_loss, silog_depth, topk_ce, video_total
from .metrics import VpqInput, iou, m_perception, vpq
from .probabilistic import (
    DiagonalGaussian,
    LinearGaussianWorldModel,
    Trajectory,
    kalman_log_evidence,
    kl_diag,
    lgssm_filter,
    sequential_free_energy,
)
from .synth import SceneConfig, load_dataset, make_dataset, simulate
from .tracking import assign_pixels, decode_sequence, hungarian, nms_peaks, track_step
from .util import FormatError, NumericalError

__all__ = [
    "Field2D",
    "Field3D",
    "FieldSeq",
    "bilinear_sample",
    "softmax",
    "BevGridSpec",
    "Camera",
    "CameraFeature",
    "CameraIntrinsics",
    "DepthBins",
    "encode_observation",
    "lift_features",
    "splat_to_bev",
    "SE2Pose",
    "SE3Pose",
    "align_history",
    "flatten_to_se2",
    "se3_compose",
    "se3_inverse",
    "warp_bev",
    "DiagonalGaussian",
    "LinearGaussianWorldModel",
    "Trajectory",
    "kalman_log_evidence",
    "kl_diag",
    "lgssm_filter",
    "sequential_free_energy",
    "LossWeights",
    "control_loss",
    "silog_depth",
    "topk_ce",
    "video_total",
    "BevBox",
    "DecodeParams",
    "InstanceMap",
    "boxes_to_occupancy",
    "centerness_label",
    "flow_label",
    "offset_label",
    "assign_pixels",
    "decode_sequence",
    "hungarian",
    "nms_peaks",
    "track_step",
    "VpqInput",
    "iou",
    "m_perception",
    "vpq",
    "SceneConfig",
    "load_dataset",
    "make_dataset",
    "simulate",
    "RunConfig",
    "FormatError",
    "NumericalError",
]
