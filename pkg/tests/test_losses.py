import math

import numpy as np
import pytest

from bevkit.losses import (
    ControlPrediction,
    LossWeights,
    control_loss,
    discounted_sum,
    fiery_total,
    future_prediction_loss,
    huber,
    l1_loss,
    l2_loss,
    silog_depth,
    topk_ce,
    uncertainty_weighted,
    video_total,
)
from bevkit.probabilistic import categorical_ce


def logits_with_ce(ce_values) -> tuple:
    """Two-class logits and labels whose per-cell cross-entropies are ``ce_values``."""
    ce = np.asarray(ce_values, dtype=float).reshape(1, -1)
    # -log softmax([0, x])[0] = log(1 + e^x) = ce  =>  x = log(e^ce - 1)
    x = np.where(ce > 0, np.log(np.expm1(np.maximum(ce, 1e-300))), -800.0)
    logits = np.stack([np.zeros_like(ce), x])
    return logits, np.zeros(ce.shape, dtype=int)


def test_loss_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.gamma_f, w.lambda_p, w.gamma_bev, w.k_frac) == (0.6, 0.005, 0.95, 0.25)
    assert w.lambda_probabilistic == 100.0
    for kwargs in [
        dict(gamma_f=1.0),
        dict(gamma_c=0.0),
        dict(lambda_d=-1.0),
        dict(k_frac=0.0),
        dict(k_frac=1.5),
    ]:
        with pytest.raises(ValueError):
            LossWeights(**kwargs)


def test_loss_weights_from_dict():
    w = LossWeights.from_dict({"gamma_f": 0.5, "lambda_c": 2.0})
    assert (w.gamma_f, w.lambda_c, w.lambda_d) == (0.5, 2.0, 1.0)
    assert LossWeights.from_dict(w.to_dict()) == w
    with pytest.raises(ValueError, match="gamma_x"):
        LossWeights.from_dict({"gamma_x": 0.5})


def test_topk_examples():
    logits, labels = logits_with_ce([0.0, 0.0, 0.0, 4.0])
    assert topk_ce(logits, labels, 0.25) == pytest.approx(4.0)
    logits, labels = logits_with_ce([1.3] * 6)
    for k in (0.1, 0.5, 1.0):
        assert topk_ce(logits, labels, k) == pytest.approx(1.3)


def test_topk_full_fraction_is_categorical_ce():
    rng = np.random.default_rng(0)
    logits = rng.normal(scale=3, size=(4, 5, 7))
    labels = rng.integers(0, 4, size=(5, 7))
    assert topk_ce(logits, labels, 1.0) == categorical_ce(logits, labels)


def test_topk_monotone_in_fraction():
    rng = np.random.default_rng(1)
    logits = rng.normal(scale=3, size=(3, 6, 6))
    labels = rng.integers(0, 3, size=(6, 6))
    values = [topk_ce(logits, labels, k) for k in np.linspace(0.05, 1.0, 20)]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_topk_rejects_fraction():
    logits, labels = logits_with_ce([1.0, 2.0])
    for k in (0.0, 1.01):
        with pytest.raises(ValueError, match="k_frac"):
            topk_ce(logits, labels, k)


def test_silog_examples():
    gt = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert silog_depth(gt, gt) == 0.0
    pred = np.array([[1.0, 2.0]])
    assert silog_depth(pred, np.ones((1, 2))) == pytest.approx(math.log(2) ** 2 / 4)
    assert silog_depth(pred, np.ones((1, 2))) == pytest.approx(0.12011, abs=1e-5)


def test_silog_scale_invariant():
    rng = np.random.default_rng(2)
    pred = rng.uniform(1, 50, size=(8, 8))
    gt = rng.uniform(1, 50, size=(8, 8))
    base = silog_depth(pred, gt)
    for scale in np.geomspace(0.1, 10, 15):
        assert abs(silog_depth(scale * pred, gt) - base) < 1e-9
        assert silog_depth(scale * gt, gt) < 1e-9


def test_silog_rejects_non_positive():
    with pytest.raises(ValueError, match="positive"):
        silog_depth(np.array([[0.0, 1.0]]), np.ones((1, 2)))
    with pytest.raises(ValueError, match="Shape mismatch"):
        silog_depth(np.ones((1, 2)), np.ones((2, 1)))


@pytest.mark.parametrize("error, expected", [(0.0, 0.0), (0.5, 0.125), (3.0, 2.5)])
def test_huber_examples(error, expected):
    assert huber(np.array([error]), np.array([0.0]), 1.0) == pytest.approx(expected)


def test_huber_is_smooth_at_threshold():
    delta, h = 0.7, 1e-7
    left = (huber([delta], [0.0], delta) - huber([delta - h], [0.0], delta)) / h
    right = (huber([delta + h], [0.0], delta) - huber([delta], [0.0], delta)) / h
    assert left == pytest.approx(delta, abs=1e-6)
    assert right == pytest.approx(delta, abs=1e-6)
    with pytest.raises(ValueError, match="delta"):
        huber([1.0], [0.0], 0.0)


def test_masked_l1_l2():
    pred = np.array([[1.0, 3.0], [0.0, -2.0]])
    gt = np.zeros((2, 2))
    assert l2_loss(pred, gt) == pytest.approx(14 / 4)
    assert l1_loss(pred, gt, mask=pred > 0) == pytest.approx(2.0)
    assert l2_loss(pred, gt, mask=np.zeros((2, 2), dtype=bool)) == 0.0


@pytest.mark.parametrize(
    "steps, gamma, expected",
    [
        ([1.0, 2.0, 3.0], 1.0, 6.0),
        ([1.0, 1.0, 1.0], 0.5, 1.75),
        ([2.0, 0.0, 4.0], 0.6, 3.44),
    ],
)
def test_discounted_sum(steps, gamma, expected):
    assert discounted_sum(steps, gamma) == pytest.approx(expected)


def test_discounted_sum_errors():
    with pytest.raises(ValueError, match="at least one step"):
        discounted_sum([], 0.5)
    with pytest.raises(ValueError, match="gamma"):
        discounted_sum([1.0], 0.0)


def test_control_loss_examples():
    pred = ControlPrediction(1.0, speed_rate=5.0, steering=0.1, steering_rate=-0.5)
    offsets = [0.0, 0.2, 0.4]
    on_lines = [(1.0 + 5.0 * d, 0.1 - 0.5 * d) for d in offsets]
    assert control_loss(pred, on_lines, 0.7, offsets) == pytest.approx(0.0, abs=1e-24)

    zero = ControlPrediction(0.0, 0.0, 0.0, 0.0)
    assert control_loss(zero, [(1.0, 1.0)], 0.3, [0.0]) == pytest.approx(2.0)

    pred = ControlPrediction(1.0, 5.0, 0.0, 0.0)
    value = control_loss(pred, [(1.0, 0.0), (3.0, 0.0)], 0.7, [0.0, 0.2])
    assert value == pytest.approx(0.7)


def test_control_loss_positive_off_the_lines():
    pred = ControlPrediction(2.0, 0.0, 0.0, 0.0)
    assert control_loss(pred, [(2.0, 0.0), (2.0, 0.01)], 0.7, [0.0, 0.5]) > 0
    with pytest.raises(ValueError):
        control_loss(pred, [(2.0, 0.0)], 0.7, [0.0, 0.5])


def test_uncertainty_weighting():
    assert uncertainty_weighted([1.0, 2.5], [0.0, 0.0]) == pytest.approx(3.5)
    assert uncertainty_weighted([2.0], [math.log(2)]) == pytest.approx(1 + math.log(2))
    grid = np.linspace(-2, 3, 5001)
    values = [uncertainty_weighted([4.0], [s]) for s in grid]
    assert grid[int(np.argmin(values))] == pytest.approx(math.log(4.0), abs=1e-3)
    with pytest.raises(ValueError):
        uncertainty_weighted([1.0, 2.0], [0.0])


def test_video_total():
    assert video_total(0.0, 0.0, 0.0, 0.0, 0.0) == 0.0
    assert video_total(0.0, 1.0, 0.0, 0.0, 0.0) == pytest.approx(1.0)
    assert video_total(1.0, 0.0, 0.0, 0.0, 0.0) == pytest.approx(0.005)
    assert video_total(0.0, 0.0, 0.0, 2.0, 0.0) == pytest.approx(1.0)
    w = LossWeights(lambda_fp=2.0, lambda_c=3.0)
    assert video_total(0.0, 1.0, 1.0, 0.0, 1.0, w) == pytest.approx(
        2.0 * future_prediction_loss(1.0, 1.0, 0.0, w) + 3.0
    )


def test_fiery_total():
    ones = [1.0, 1.0]
    assert fiery_total(ones, ones, ones, ones, 0.0) == pytest.approx(4 * 1.95)
    log_vars = (math.log(2), 0.0, 0.0, 0.0)
    value = fiery_total([1.0], [0.0], [0.0], [0.0], 0.01, log_vars=log_vars)
    assert value == pytest.approx(0.5 + math.log(2) + 100 * 0.01)
    with pytest.raises(ValueError, match="kl"):
        fiery_total(ones, ones, ones, ones, -1.0)
