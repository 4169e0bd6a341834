"""
Training losses of the video world model and of the BeV future-instance model.

All losses are forward evaluations on numpy arrays; nothing here differentiates.
"""

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .fields import Field2D, Field3D
from .probabilistic import per_cell_ce
from .util import check_same_length, dataclass_from_dict


@dataclass(frozen=True)
class LossWeights:
    """
    Weights and discounts of the loss terms.

    The video model uses ``gamma_f``, ``lambda_d``, ``lambda_l``, ``lambda_f``,
    ``lambda_p``, ``lambda_fp``, ``gamma_c`` and ``lambda_c``; the BeV model uses
    ``gamma_bev``, ``k_frac`` and ``lambda_probabilistic``.
    """

    gamma_f: float = 0.6
    lambda_d: float = 1.0
    lambda_l: float = 1.0
    lambda_f: float = 0.5
    lambda_p: float = 0.005
    lambda_fp: float = 1.0
    gamma_c: float = 0.7
    lambda_c: float = 1.0
    gamma_bev: float = 0.95
    k_frac: float = 0.25
    lambda_probabilistic: float = 100.0

    def __post_init__(self):
        for name in ("gamma_f", "gamma_c", "gamma_bev"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {value}.")
        for name in (
            "lambda_d",
            "lambda_l",
            "lambda_f",
            "lambda_p",
            "lambda_fp",
            "lambda_c",
            "lambda_probabilistic",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative.")
        if not 0 < self.k_frac <= 1:
            raise ValueError(f"k_frac must lie in (0, 1], got {self.k_frac}.")

    @classmethod
    def from_dict(cls, data: dict) -> "LossWeights":
        """Build from a mapping; unknown keys are rejected."""
        return dataclass_from_dict(cls, data, "loss")

    def to_dict(self) -> dict:  # noqa D102
        return asdict(self)


@dataclass(frozen=True)
class ControlPrediction:
    """Predicted speed and steering with their rates of change."""

    speed: float
    speed_rate: float
    steering: float
    steering_rate: float


def _check_k_frac(k_frac: float) -> None:
    if not 0 < k_frac <= 1:
        raise ValueError(f"k_frac must lie in (0, 1], got {k_frac}.")


def topk_ce(logits: Field3D, labels: Field2D, k_frac: float = 0.25) -> float:
    """
    Cross-entropy averaged over the ``ceil(k_frac * N)`` hardest cells.

    Ties at the cut are resolved in favour of earlier cells in row-major order.
    """
    _check_k_frac(k_frac)
    ce = per_cell_ce(logits, labels).ravel()
    n_top = max(1, math.ceil(round(k_frac * ce.size, 9)))
    order = np.argsort(-ce, kind="stable")
    # averaging in row-major order makes k_frac=1 identical to the plain mean
    selected = np.sort(order[:n_top])
    return float(np.mean(ce[selected]))


def silog_depth(pred: Field2D, gt: Field2D) -> float:
    """
    Scale-invariant log depth loss: the variance of ``log pred - log gt``.

    Equals ``mean(d^2) - mean(d)^2``, so a global rescaling of ``pred`` leaves it
    unchanged.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"Shape mismatch: {pred.shape} != {gt.shape}.")
    if np.any(pred <= 0) or np.any(gt <= 0):
        raise ValueError("Depths must be strictly positive.")
    return float(np.var(np.log(pred) - np.log(gt)))


def huber(pred, gt, delta: float = 1.0) -> float:
    """Mean Huber penalty of ``pred - gt``."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}.")
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"Shape mismatch: {pred.shape} != {gt.shape}.")
    return float(np.mean(special.huber(delta, pred - gt)))


def _masked_mean(values: np.ndarray, mask: Optional[np.ndarray]) -> float:
    if mask is None:
        return float(np.mean(values))
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), values.shape)
    if not mask.any():
        return 0.0
    return float(np.mean(values[mask]))


def l2_loss(pred, gt, mask=None) -> float:
    """Mean squared error, optionally restricted to ``mask`` (used for centerness)."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return _masked_mean(diff ** 2, mask)


def l1_loss(pred, gt, mask=None) -> float:
    """Mean absolute error, optionally restricted to ``mask`` (offset and flow)."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return _masked_mean(np.abs(diff), mask)


def discounted_sum(per_step: Sequence[float], gamma: float) -> float:
    """Return ``sum_t gamma^(t-1) per_step[t]``."""
    if len(per_step) == 0:
        raise ValueError("discounted_sum needs at least one step.")
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}.")
    steps = np.asarray(per_step, dtype=np.float64)
    return float(np.sum(gamma ** np.arange(len(steps)) * steps))


def control_loss(
    pred: ControlPrediction,
    expert: Sequence[Tuple[float, float]],
    gamma_c: float,
    offsets: Sequence[float],
) -> float:
    """
    Discounted squared error between expert ``(speed, steering)`` pairs and the
    linear extrapolation of the predicted controls at time ``offsets``.
    """
    check_same_length(expert, offsets, "expert", "offsets")
    expert = np.asarray(expert, dtype=np.float64).reshape(-1, 2)
    offsets = np.asarray(offsets, dtype=np.float64)
    speed = pred.speed + offsets * pred.speed_rate
    steering = pred.steering + offsets * pred.steering_rate
    errors = (expert[:, 0] - speed) ** 2 + (expert[:, 1] - steering) ** 2
    return float(np.sum(gamma_c ** np.arange(len(errors)) * errors))


def uncertainty_weighted(losses: Sequence[float], log_vars: Sequence[float]) -> float:
    """Homoscedastic task weighting ``sum_i exp(-s_i) L_i + s_i``."""
    check_same_length(losses, log_vars, "losses", "log_vars")
    losses = np.asarray(losses, dtype=np.float64)
    log_vars = np.asarray(log_vars, dtype=np.float64)
    return float(np.sum(np.exp(-log_vars) * losses + log_vars))


def future_prediction_loss(
    L_d: float, L_l: float, L_f: float, w: LossWeights = LossWeights()
) -> float:
    """``lambda_d L_d + lambda_l L_l + lambda_f L_f``."""
    return w.lambda_d * L_d + w.lambda_l * L_l + w.lambda_f * L_f


def video_total(
    L_prob: float,
    L_d: float,
    L_l: float,
    L_f: float,
    L_c: float,
    w: LossWeights = LossWeights(),
) -> float:
    """Total loss of the video world model."""
    return (
        w.lambda_p * L_prob
        + w.lambda_fp * future_prediction_loss(L_d, L_l, L_f, w)
        + w.lambda_c * L_c
    )


def fiery_total(
    segmentation: Sequence[float],
    centerness: Sequence[float],
    offset: Sequence[float],
    flow: Sequence[float],
    kl: float,
    log_vars: Sequence[float] = (0.0, 0.0, 0.0, 0.0),
    w: LossWeights = LossWeights(),
) -> float:
    """
    Total loss of the BeV future-instance model.

    Each argument holds one loss per future timestep; they are discounted with
    ``gamma_bev``, combined with uncertainty weighting (one log-variance per
    head, in the order segmentation, centerness, offset, flow) and the KL between
    the future and present distributions is added with weight
    ``lambda_probabilistic``.
    """
    if kl < 0:
        raise ValueError(f"kl must be non-negative, got {kl}.")
    heads = [segmentation, centerness, offset, flow]
    discounted = [discounted_sum(head, w.gamma_bev) for head in heads]
    return uncertainty_weighted(discounted, log_vars) + w.lambda_probabilistic * kl
