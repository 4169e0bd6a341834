"""
Evaluation metrics: intersection-over-union, video panoptic quality (VPQ) and
the unified perception score combining depth, segmentation and flow.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .fields import Field2D, Field3D
from .geometry import BevGridSpec
from .instances import InstanceMap
from .util import ordered_map

logger = logging.getLogger(__name__)

SHORT_RANGE = 30.0
LONG_RANGE = 100.0


def iou(pred, gt) -> float:
    """
    Intersection-over-union of two binary masks (nonzero is foreground).

    Two empty masks have IoU 1.
    """
    pred = np.asarray(pred) != 0
    gt = np.asarray(gt) != 0
    if pred.shape != gt.shape:
        raise ValueError(f"Shape mismatch: {pred.shape} != {gt.shape}.")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def mean_iou(pred_labels, gt_labels, n_classes: int) -> float:
    """
    Mean IoU over semantic classes ``0..n_classes-1``; classes absent from both
    maps are skipped.
    """
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ValueError(f"Shape mismatch: {pred_labels.shape} != {gt_labels.shape}.")
    scores = [
        iou(pred_labels == c, gt_labels == c)
        for c in range(n_classes)
        if np.any(pred_labels == c) or np.any(gt_labels == c)
    ]
    return float(np.mean(scores)) if scores else 1.0


def end_point_error(pred_flow: Field3D, gt_flow: Field3D, mask=None) -> float:
    """Mean Euclidean distance between two-channel flow vectors."""
    pred_flow = np.asarray(pred_flow, dtype=np.float64)
    gt_flow = np.asarray(gt_flow, dtype=np.float64)
    if pred_flow.shape != gt_flow.shape or pred_flow.shape[0] != 2:
        raise ValueError(
            f"Flows must share a (2, H, W) shape, got {pred_flow.shape} and "
            f"{gt_flow.shape}."
        )
    errors = np.sqrt(((pred_flow - gt_flow) ** 2).sum(axis=0))
    if mask is None:
        return float(errors.mean())
    mask = np.asarray(mask) != 0
    return float(errors[mask].mean()) if mask.any() else 0.0


def crop_to_range(
    grid_data: Union[np.ndarray, InstanceMap], grid: BevGridSpec, range_m: float
):
    """
    Keep the central ``range_m x range_m`` window of a grid (last two axes).

    A range at least as large as the grid returns the input unchanged.
    """
    if not range_m > 0:
        raise ValueError(f"range_m must be positive, got {range_m}.")
    if np.shape(grid_data)[-2:] != grid.shape:
        raise ValueError(
            f"Grid data of shape {np.shape(grid_data)} does not match {grid.shape}."
        )
    half_rows = min(grid.height // 2, int(round(range_m / 2 / grid.resolution)))
    half_cols = min(grid.width // 2, int(round(range_m / 2 / grid.resolution)))
    r0, c0 = grid.height // 2 - half_rows, grid.width // 2 - half_cols
    rows = slice(r0, r0 + 2 * half_rows)
    cols = slice(c0, c0 + 2 * half_cols)
    cropped = np.asarray(grid_data)[..., rows, cols]
    if isinstance(grid_data, InstanceMap):
        return InstanceMap(cropped)
    if isinstance(grid_data, Field2D):
        return Field2D(cropped)
    if isinstance(grid_data, Field3D):
        return Field3D(cropped)
    return cropped


@dataclass(frozen=True, eq=False)
class VpqInput:
    """Predicted and ground-truth instance sequences over ``horizon + 1`` steps."""

    pred: Sequence[InstanceMap]
    gt: Sequence[InstanceMap]
    horizon: int

    def __post_init__(self):
        n_steps = self.horizon + 1
        if self.horizon < 0:
            raise ValueError(f"horizon must be non-negative, got {self.horizon}.")
        if len(self.pred) != n_steps or len(self.gt) != n_steps:
            raise ValueError(
                f"Expected {n_steps} steps for horizon {self.horizon}, got "
                f"{len(self.pred)} predicted and {len(self.gt)} ground-truth maps."
            )
        pred = [m if isinstance(m, InstanceMap) else InstanceMap(m) for m in self.pred]
        gt = [m if isinstance(m, InstanceMap) else InstanceMap(m) for m in self.gt]
        shapes = {m.shape for m in pred + gt}
        if len(shapes) != 1:
            raise ValueError(f"All instance maps must share a shape, got {shapes}.")
        object.__setattr__(self, "pred", pred)
        object.__setattr__(self, "gt", gt)


@dataclass
class VpqResult:
    """VPQ with its per-step breakdown (a ``pandas.DataFrame`` indexed by step)."""

    vpq: float
    per_t: pd.DataFrame
    tp: int = 0
    fp: int = 0
    fn: int = 0
    matches: List[Dict[int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        """JSON-ready summary."""
        return {
            "vpq": self.vpq,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "per_t": self.per_t.reset_index().to_dict(orient="records"),
        }


def _iou_matrix(pred: InstanceMap, gt: InstanceMap):
    pred_arr, gt_arr = np.asarray(pred), np.asarray(gt)
    pred_ids, gt_ids = pred.ids, gt.ids
    mat = np.zeros((len(pred_ids), len(gt_ids)))
    for a, p in enumerate(pred_ids):
        p_mask = pred_arr == p
        for b, g in enumerate(gt_ids):
            mat[a, b] = iou(p_mask, gt_arr == g)
    return pred_ids, gt_ids, mat


def vpq_breakdown(
    data: VpqInput,
    grid: Optional[BevGridSpec] = None,
    range_m: Optional[float] = None,
    n_threads: int = 1,
) -> VpqResult:
    """
    Video panoptic quality with per-step true positive, false positive and false
    negative counts.

    A (prediction, ground truth) pair with IoU above 0.5 is a true positive
    only if neither instance has been matched to a different partner at an
    earlier step; the first match fixes the correspondence for the rest of the
    sequence, across gaps. With ``grid`` and ``range_m`` the maps are cropped to
    the central window first.
    """
    pred, gt = data.pred, data.gt
    if range_m is not None:
        if grid is None:
            raise ValueError("Cropping to a range needs the grid spec.")
        pred = [crop_to_range(m, grid, range_m) for m in pred]
        gt = [crop_to_range(m, grid, range_m) for m in gt]

    matrices = ordered_map(lambda pg: _iou_matrix(*pg), list(zip(pred, gt)), n_threads)

    pred_to_gt: Dict[int, int] = {}
    gt_to_pred: Dict[int, int] = {}
    rows = []
    step_matches = []
    for t, (pred_ids, gt_ids, mat) in enumerate(matrices):
        tp_pairs = {}
        iou_sum = 0.0
        for a, b in zip(*np.nonzero(mat > 0.5)):
            p, g = pred_ids[a], gt_ids[b]
            if gt_to_pred.get(g, p) != p or pred_to_gt.get(p, g) != g:
                continue
            gt_to_pred[g] = p
            pred_to_gt[p] = g
            tp_pairs[p] = g
            iou_sum += mat[a, b]
        tp = len(tp_pairs)
        rows.append(
            {
                "t": t,
                "tp": tp,
                "fp": len(pred_ids) - tp,
                "fn": len(gt_ids) - tp,
                "iou_sum": iou_sum,
            }
        )
        step_matches.append(tp_pairs)

    per_t = pd.DataFrame(
        rows, columns=["t", "tp", "fp", "fn", "iou_sum"]
    ).set_index("t")
    per_t["denominator"] = per_t["tp"] + 0.5 * per_t["fp"] + 0.5 * per_t["fn"]
    denominator = per_t["denominator"].sum()
    value = 1.0 if denominator == 0 else float(per_t["iou_sum"].sum() / denominator)
    logger.debug("VPQ %.6f over %d steps", value, len(per_t))
    return VpqResult(
        vpq=value,
        per_t=per_t,
        tp=int(per_t["tp"].sum()),
        fp=int(per_t["fp"].sum()),
        fn=int(per_t["fn"].sum()),
        matches=step_matches,
    )


def vpq(data: VpqInput, **kwargs) -> float:
    """
    Video panoptic quality in ``[0, 1]``.

    Keyword arguments are forwarded to :func:`vpq_breakdown`.
    """
    return vpq_breakdown(data, **kwargs).vpq


def m_perception(
    depth_base: float,
    depth_new: float,
    seg_base: float,
    seg_new: float,
    flow_base: float,
    flow_new: float,
) -> float:
    """
    Unified perception score in percent: the mean of the relative decrease in
    depth error, increase in segmentation IoU and decrease in flow error.

    >>> round(m_perception(1.467, 0.970, 0.356, 0.396, 5.707, 4.857), 1)
    20.0
    """
    for name, value in (
        ("depth_base", depth_base),
        ("seg_base", seg_base),
        ("flow_base", flow_base),
    ):
        if value == 0:
            raise ValueError(f"{name} must be nonzero.")
    depth = (depth_base - depth_new) / depth_base
    seg = (seg_new - seg_base) / seg_base
    flow = (flow_base - flow_new) / flow_base
    return (depth + seg + flow) / 3 * 100
