import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raunet.losses import LossConfig, cel_dice, cross_entropy, dice_loss, get_loss, soft_dice
from raunet.ops import softmax_channels

from conftest import t64


def random_case(seed, n=2, k=4, h=5, w=6):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, k, h, w)) * 2, rng.integers(0, k, (n, h, w))


def one_hot(target, k):
    return np.moveaxis(np.eye(k)[target], -1, 1)


def test_confident_correct_logits_give_tiny_ce():
    _, target = random_case(0)
    logits = 50.0 * one_hot(target, 4)
    assert cross_entropy(t64(logits), target).item() < 1e-6


@pytest.mark.parametrize("k", [2, 3, 4, 11])
def test_zero_logits_give_log_k(k):
    target = np.random.default_rng(k).integers(0, k, (2, 3, 3))
    assert cross_entropy(t64(np.zeros((2, k, 3, 3))), target).item() == math.log(k)


def test_two_class_hand_value():
    logits = np.array([0.0, math.log(3)]).reshape(1, 2, 1, 1)
    assert cross_entropy(t64(logits), np.zeros((1, 1, 1), int)).item() == pytest.approx(math.log(4), abs=1e-15)


def test_ce_increases_with_more_wrong_pixels():
    logits = np.zeros((1, 2, 1, 4))
    logits[0, 0] = 5.0  # confident background everywhere
    target = np.zeros((1, 1, 4), int)
    base = cross_entropy(t64(logits), target).item()
    for wrong in range(1, 5):
        target[0, 0, :wrong] = 1
        value = cross_entropy(t64(logits), target).item()
        assert value > base
        base = value


def test_ce_rejects_bad_targets():
    with pytest.raises(ValueError):
        cross_entropy(t64(np.zeros((1, 2, 2, 2))), np.full((1, 2, 2), 2))
    with pytest.raises(ValueError):
        cross_entropy(t64(np.zeros((1, 2, 2, 2))), np.zeros((1, 2, 3), int))


def test_dice_perfect_overlap():
    _, target = random_case(1)
    assert soft_dice(t64(one_hot(target, 4)), target).item() == pytest.approx(1.0, abs=1e-12)


def test_dice_disjoint_is_near_zero():
    target = np.zeros((1, 4, 4), int)
    target[0, :2] = 1
    probs = np.zeros((1, 2, 4, 4))
    probs[0, 0, :2] = 1
    probs[0, 1, 2:] = 1
    d = soft_dice(t64(probs), target).item()
    assert d == pytest.approx(1e-6 / (16 + 1e-6))


def test_dice_binary_hand_value():
    probs = np.zeros((1, 2, 2, 2))
    probs[0, 1] = [[1, 0], [0, 0]]
    probs[0, 0] = 1 - probs[0, 1]
    target = np.array([[[1, 0], [0, 1]]])
    assert soft_dice(t64(probs), target, smooth_eps=1e-12).item() == pytest.approx(2 / 3, abs=1e-9)


def test_dice_ignores_extra_correct_background():
    logits, target = random_case(2, n=1, h=4, w=4)
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    d0 = soft_dice(t64(probs), target).item()
    pad_p = np.zeros((1, 4, 4, 40))
    pad_p[:, 0] = 1.0
    bigger_p = np.concatenate([probs, pad_p], axis=3)
    bigger_t = np.concatenate([target, np.zeros((1, 4, 40), int)], axis=2)
    assert soft_dice(t64(bigger_p), bigger_t).item() == pytest.approx(d0, abs=1e-9)


def test_binary_dice_collapses_foreground():
    probs = np.zeros((1, 3, 1, 2))
    probs[0, 1, 0, 0] = 1  # predicts class 1 where truth is class 2
    probs[0, 2, 0, 1] = 1
    target = np.array([[[2, 1]]])
    assert soft_dice(t64(probs), target, binary=True).item() == pytest.approx(1.0)
    assert soft_dice(t64(probs), target).item() == pytest.approx(1e-6 / (2 + 1e-6), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_alpha_endpoints(seed):
    logits, target = random_case(seed)
    h = cross_entropy(t64(logits), target).item()
    d = soft_dice(softmax_channels(t64(logits)), target).item()
    assert abs(cel_dice(t64(logits), target, LossConfig(alpha=0.0)).item() - h) <= 1e-12
    assert abs(cel_dice(t64(logits), target, LossConfig(alpha=1.0)).item() + math.log(d)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.integers(0, 10**6))
def test_cel_dice_is_affine_blend(alpha, seed):
    logits, target = random_case(seed)
    h = cross_entropy(t64(logits), target).item()
    d = soft_dice(softmax_channels(t64(logits)), target).item()
    value = cel_dice(t64(logits), target, LossConfig(alpha=alpha)).item()
    assert value == pytest.approx((1 - alpha) * h - alpha * math.log(d), abs=1e-12)
    assert value >= 0


def test_perfect_prediction_gives_near_zero_loss():
    _, target = random_case(3)
    assert cel_dice(t64(60.0 * one_hot(target, 4)), target).item() < 1e-6


def test_dice_loss_is_one_minus_dice():
    logits, target = random_case(4)
    d = soft_dice(softmax_channels(t64(logits)), target).item()
    assert dice_loss(t64(logits), target).item() == pytest.approx(1 - d, abs=1e-15)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(alpha=1.5)
    with pytest.raises(ValueError):
        LossConfig(smooth_eps=0)
    with pytest.raises(ValueError):
        get_loss("focal")
    for name in ("ce", "dice", "celdice"):
        assert callable(get_loss(name))
