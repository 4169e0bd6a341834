"""
Decoding future instance segmentation from centerness, offset and flow heads,
and linking instances through time.

Each step is decoded on its own (non-maximum suppression on the centerness and
grouping of foreground cells by their offset votes); steps are then chained
serially by warping the previous instance centers with their flow and solving
a linear assignment against the current centers.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .fields import Field2D, Field3D
from .instances import DecodeParams, InstanceMap, centers_of_mass
from .util import ordered_map

logger = logging.getLogger(__name__)

Center = Tuple[int, int]


@dataclass(frozen=True)
class Assignment:
    """
    Result of :func:`hungarian`.

    ``pairs`` lists matched ``(row, col)`` indices sorted by row; ``total`` is the
    summed cost of those pairs.
    """

    pairs: List[Tuple[int, int]]
    total: float
    unmatched_rows: List[int]
    unmatched_cols: List[int]

    def as_dict(self) -> dict:
        """Mapping from row to column."""
        return dict(self.pairs)


@dataclass(frozen=True)
class MatchRecord:
    """One line of the tracking log."""

    step: int
    center_index: int
    assigned_id: int
    previous_id: Optional[int] = None
    distance: Optional[float] = None
    matched: bool = False

    def to_dict(self) -> dict:  # noqa D102
        return {
            "step": self.step,
            "center_index": self.center_index,
            "assigned_id": self.assigned_id,
            "previous_id": self.previous_id,
            "distance": self.distance,
            "matched": self.matched,
        }


@dataclass
class TrackResult:
    """Output of :func:`track_step`."""

    instances: InstanceMap
    next_id: int
    matches: List[MatchRecord] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class DecodeHeads:
    """
    Head outputs of one future step.

    ``segmentation`` is either a binary ``Field2D`` or a ``Field3D`` of
    background/vehicle logits (channel 1 is the vehicle class).
    """

    segmentation: Union[Field2D, Field3D]
    centerness: Field2D
    offsets: Field3D
    flow: Field3D

    def __post_init__(self):
        shape = np.shape(self.centerness)
        if np.ndim(self.centerness) != 2:
            raise ValueError(f"centerness must be 2D, got shape {shape}.")
        for name in ("offsets", "flow"):
            value = np.shape(getattr(self, name))
            if value != (2,) + shape:
                raise ValueError(f"{name} must have shape {(2,) + shape}, got {value}.")
        if np.shape(self.segmentation)[-2:] != shape:
            raise ValueError(
                f"segmentation of shape {np.shape(self.segmentation)} does not match "
                f"centerness {shape}."
            )

    def binary_segmentation(self) -> np.ndarray:  # noqa D102
        seg = np.asarray(self.segmentation)
        if seg.ndim == 3:
            return np.argmax(seg, axis=0) == 1
        return seg != 0


def nms_peaks(centerness: Field2D, p: DecodeParams) -> List[Center]:
    """
    Local maxima of ``centerness`` at or above ``p.center_threshold``.

    A cell survives if no other cell in its ``nms_window`` neighbourhood is
    larger and no cell before it in row-major order has the same value. Peaks
    are returned in row-major order.
    """
    values = np.asarray(centerness, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"centerness must be 2D, got shape {values.shape}.")
    window_max = ndimage.maximum_filter(
        values, size=p.nms_window, mode="constant", cval=-np.inf
    )
    candidates = np.argwhere((values >= p.center_threshold) & (values == window_max))
    half = p.nms_window // 2
    height, width = values.shape
    peaks = []
    for r, c in candidates:
        r0, r1 = max(r - half, 0), min(r + half + 1, height)
        c0, c1 = max(c - half, 0), min(c + half + 1, width)
        window = values[r0:r1, c0:c1]
        ties = np.argwhere(window == values[r, c]) + (r0, c0)
        earlier = (ties[:, 0] < r) | ((ties[:, 0] == r) & (ties[:, 1] < c))
        if not earlier.any():
            peaks.append((int(r), int(c)))
    return peaks


def assign_pixels(
    seg: Field2D, offsets: Field3D, centers: Sequence[Center]
) -> InstanceMap:
    """
    Give every foreground cell the 1-based index of the center nearest to its
    vote ``cell + offset``; ties go to the earlier center.
    """
    fg = np.asarray(seg) != 0
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != (2,) + fg.shape:
        raise ValueError(
            f"offsets must have shape {(2,) + fg.shape}, got {offsets.shape}."
        )
    out = np.zeros(fg.shape, dtype=np.int64)
    if not fg.any():
        return InstanceMap(out)
    if len(centers) == 0:
        warnings.warn(
            "No instance centers for a non-empty segmentation; foreground left "
            "unassigned."
        )
        return InstanceMap(out)
    rows, cols = np.nonzero(fg)
    votes = np.stack([rows + offsets[0][fg], cols + offsets[1][fg]], axis=1)
    center_arr = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    dist2 = ((votes[:, None, :] - center_arr[None, :, :]) ** 2).sum(axis=2)
    out[rows, cols] = np.argmin(dist2, axis=1) + 1
    return InstanceMap(out)


def hungarian(cost, sentinel: Optional[float] = None) -> Assignment:
    """
    Minimum-cost one-to-one assignment of ``min(rows, cols)`` pairs.

    Entries at or above ``sentinel`` mark forbidden pairs; if the optimum has to
    use one, that pair is reported as unmatched and excluded from ``total``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a 2D matrix, got shape {cost.shape}.")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost must only contain finite values.")
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return Assignment([], 0.0, list(range(n_rows)), list(range(n_cols)))

    row_idx, col_idx = linear_sum_assignment(cost)
    pairs = []
    for r, c in zip(row_idx, col_idx):
        if sentinel is not None and cost[r, c] >= sentinel:
            continue
        pairs.append((int(r), int(c)))
    pairs.sort()
    matched_rows = {r for r, _ in pairs}
    matched_cols = {c for _, c in pairs}
    return Assignment(
        pairs=pairs,
        total=float(sum(cost[r, c] for r, c in pairs)),
        unmatched_rows=[r for r in range(n_rows) if r not in matched_rows],
        unmatched_cols=[c for c in range(n_cols) if c not in matched_cols],
    )


def warped_centers(prev: InstanceMap, prev_flow: Field3D) -> dict:
    """Center of mass of every previous instance moved by its mean flow."""
    flow = np.asarray(prev_flow, dtype=np.float64)
    arr = np.asarray(prev)
    out = {}
    for inst_id, (r, c) in centers_of_mass(prev).items():
        mask = arr == inst_id
        out[inst_id] = (r + flow[0][mask].mean(), c + flow[1][mask].mean())
    return out


def track_step(
    prev: InstanceMap,
    prev_flow: Field3D,
    current_centers: Sequence[Center],
    current_assign: InstanceMap,
    p: DecodeParams,
    resolution: float = 0.5,
    next_id: Optional[int] = None,
    step: int = 0,
) -> TrackResult:
    """
    Carry instance ids from ``prev`` to the current step.

    Previous centers are warped by their flow and matched to
    ``current_centers`` by distance in meters (``resolution`` meters per cell).
    Matches farther apart than ``p.max_match_distance`` are broken; unmatched
    current instances draw fresh ids from ``next_id`` onwards (by default one
    above the largest previous id).
    """
    if prev.shape != current_assign.shape:
        raise ValueError(f"Shape mismatch: {prev.shape} != {current_assign.shape}.")
    if np.shape(prev_flow) != (2,) + prev.shape:
        raise ValueError(
            f"prev_flow must have shape {(2,) + prev.shape}, got {np.shape(prev_flow)}."
        )
    if next_id is None:
        next_id = max(prev.ids, default=0) + 1

    warped = warped_centers(prev, prev_flow)
    prev_ids = list(warped)
    prev_xy = np.array([warped[i] for i in prev_ids]).reshape(-1, 2)
    cur_xy = np.asarray(current_centers, dtype=np.float64).reshape(-1, 2)
    dist = resolution * np.sqrt(
        ((prev_xy[:, None, :] - cur_xy[None, :, :]) ** 2).sum(axis=2)
    )
    gate = p.max_match_distance
    # every pair beyond the gate costs the same sentinel
    assignment = hungarian(np.minimum(dist, 2 * gate + 1), sentinel=2 * gate + 1)
    by_center = {c: r for r, c in assignment.pairs if dist[r, c] <= gate}

    mapping = {}
    matches = []
    for j in range(len(cur_xy)):
        if j in by_center:
            r = by_center[j]
            assigned = prev_ids[r]
            record = MatchRecord(
                step, j, assigned, prev_ids[r], float(dist[r, j]), True
            )
        else:
            assigned = next_id
            next_id += 1
            record = MatchRecord(step, j, assigned)
        mapping[j + 1] = assigned
        matches.append(record)

    logger.debug(
        "step %d: %d matched, %d new",
        step,
        len(by_center),
        len(cur_xy) - len(by_center),
    )
    arr = np.asarray(current_assign)
    out = np.zeros(arr.shape, dtype=np.int64)
    for local, assigned in mapping.items():
        out[arr == local] = assigned
    return TrackResult(InstanceMap(out), next_id, matches)


def decode_step(
    heads: DecodeHeads, p: DecodeParams
) -> Tuple[List[Center], InstanceMap]:
    """
    Non-maximum suppression and pixel grouping of a single step.

    Centers that attract no foreground cell are dropped, so the returned map
    numbers its instances ``1..n`` without gaps.
    """
    centers = nms_peaks(heads.centerness, p)
    assign = assign_pixels(heads.binary_segmentation(), heads.offsets, centers)
    used = set(assign.ids)
    if len(used) == len(centers):
        return centers, assign
    keep = [j for j in range(len(centers)) if j + 1 in used]
    logger.debug("dropping %d empty centers", len(centers) - len(keep))
    mapping = {j + 1: k + 1 for k, j in enumerate(keep)}
    return [centers[j] for j in keep], assign.relabel(mapping)


def decode_sequence(
    heads: Sequence[DecodeHeads],
    p: DecodeParams = DecodeParams(),
    resolution: float = 0.5,
    n_threads: int = 1,
    return_log: bool = False,
):
    """
    Decode a temporally consistent sequence of instance maps.

    Steps are decoded independently (optionally on ``n_threads`` threads) and
    then tracked serially. The first step's ids are ``1..n`` in center order.
    With ``return_log`` the list of :class:`MatchRecord` is returned as well.
    """
    if len(heads) == 0:
        raise ValueError("decode_sequence needs at least one step.")
    decoded = ordered_map(lambda h: decode_step(h, p), list(heads), n_threads)

    first_centers, first_map = decoded[0]
    maps = [first_map]
    log = [
        MatchRecord(0, j, j + 1) for j in range(len(first_centers))
    ]
    next_id = len(first_centers) + 1
    for t in range(1, len(heads)):
        centers, assign = decoded[t]
        result = track_step(
            maps[-1],
            heads[t - 1].flow,
            centers,
            assign,
            p,
            resolution=resolution,
            next_id=next_id,
            step=t,
        )
        maps.append(result.instances)
        log.extend(result.matches)
        next_id = result.next_id
    if return_log:
        return maps, log
    return maps


def static_baseline(present: InstanceMap, horizon: int) -> List[InstanceMap]:
    """Predict the present instance map for every future step."""
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}.")
    return [InstanceMap(np.array(present)) for _ in range(horizon)]


def extrapolation_baseline(
    past: Sequence[InstanceMap], horizon: int
) -> List[InstanceMap]:
    """
    Shift each present instance by its last observed per-step displacement.

    Instances of the last two past maps are re-identified by a minimum-distance
    assignment of their centers of mass, so their ids need not agree. The
    displacement of a present instance is the change of its center since its
    match (zero when unmatched). Masks are shifted by whole cells and the
    larger id wins where shifted masks overlap.
    """
    if len(past) == 0:
        raise ValueError("extrapolation_baseline needs at least one past map.")
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}.")
    present = past[-1]
    com_now = centers_of_mass(present)
    velocity = {}
    if len(past) > 1 and com_now:
        com_before = centers_of_mass(past[-2])
        now_ids, before_ids = list(com_now), list(com_before)
        now_xy = np.array([com_now[i] for i in now_ids])
        before_xy = np.array([com_before[i] for i in before_ids]).reshape(-1, 2)
        diff = now_xy[:, None, :] - before_xy[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        for r, c in hungarian(dist).pairs:
            velocity[now_ids[r]] = now_xy[r] - before_xy[c]
    arr = np.asarray(present)

    out = []
    for h in range(1, horizon + 1):
        pred = np.zeros(arr.shape, dtype=np.int64)
        for inst_id in sorted(com_now):
            dr, dc = velocity.get(inst_id, (0.0, 0.0))
            shift = (int(np.floor(h * dr + 0.5)), int(np.floor(h * dc + 0.5)))
            moved = ndimage.shift(
                (arr == inst_id).astype(np.float64), shift, order=0, cval=0.0
            )
            pred[moved > 0.5] = inst_id
        out.append(InstanceMap(pred))
    return out
