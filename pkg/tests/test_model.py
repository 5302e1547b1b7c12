import math
import time

import numpy as np
import pytest

from bleedsense.tinynn import layers
from bleedsense.tinynn.model import SHAPE_CHAIN, ModelParams, cross_entropy, forward, loss_and_grad


def test_parameter_count():
    assert ModelParams.zeros().n_params == 3862
    assert ModelParams.init(np.random.default_rng(0)).flatten().shape == (3862,)


def test_shape_chain():
    params = ModelParams.init(np.random.default_rng(0))
    _, cache = forward(params, np.random.default_rng(1).normal(size=(3, 6, 24)), capture=True)
    assert cache["conv1"].shape[1:] == (4, 6, 24)
    assert cache["pool1"].shape[1:] == (4, 3, 12)
    assert cache["conv2"].shape[1:] == (8, 3, 12)
    assert cache["pool2"].shape[1:] == (8, 1, 6)
    assert cache["flat"].shape[1:] == (48,)
    assert cache["fc1"].shape[1:] == (64,)
    assert cache["logits"].shape[1:] == (6,)
    assert SHAPE_CHAIN["flat"] == (48,)


def test_zero_model_is_uniform():
    logits = forward(ModelParams.zeros(), np.random.default_rng(2).normal(size=(4, 6, 24)))
    assert np.all(logits == 0)
    assert np.allclose(layers.softmax(logits), 1 / 6)
    loss, _ = loss_and_grad(ModelParams.zeros(), np.zeros((4, 6, 24)), np.array([0, 1, 2, 5]))
    assert loss == pytest.approx(math.log(6), abs=1e-12)


def test_large_margin_loss_goes_to_zero():
    logits = np.full((3, 6), -50.0)
    y = np.array([0, 3, 5])
    logits[np.arange(3), y] = 50.0
    assert cross_entropy(logits, y) < 1e-12


def test_wrong_input_shape():
    with pytest.raises(ValueError):
        forward(ModelParams.zeros(), np.zeros((6, 23)))


def test_invalid_labels():
    with pytest.raises(ValueError):
        loss_and_grad(ModelParams.zeros(), np.zeros((2, 6, 24)), np.array([0, 6]))
    with pytest.raises(ValueError):
        loss_and_grad(ModelParams.zeros(), np.zeros((0, 6, 24)), np.array([], dtype=int))


def test_forward_is_deterministic():
    params = ModelParams.init(np.random.default_rng(7))
    x = np.random.default_rng(8).normal(size=(1, 6, 24))
    assert forward(params, x).tobytes() == forward(params, x).tobytes()


def gradient_check(seed=0, h=1e-4, random_bias=False, floor=0.0):
    """Max of |analytic - central difference| / (|analytic| + 1e-8) over all parameters.

    ``floor`` drops entries whose gradient magnitude is below it; there the
    central difference is dominated by float64 round-off of the loss.
    """
    rng = np.random.default_rng(seed)
    params = ModelParams.init(rng)
    if random_bias:
        for name in ("conv1_b", "conv2_b", "fc1_b", "fc2_b"):
            setattr(params, name, rng.normal(scale=0.1, size=getattr(params, name).shape))
    x = rng.normal(size=(4, 6, 24))
    y = rng.integers(0, 6, size=4)
    _, grads = loss_and_grad(params, x, y)
    analytic = grads.flatten()
    theta = params.flatten()
    numeric = np.empty_like(theta)
    for k in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus[k] += h
        minus[k] -= h
        lp, _ = loss_and_grad(ModelParams.unflatten(plus), x, y)
        lm, _ = loss_and_grad(ModelParams.unflatten(minus), x, y)
        numeric[k] = (lp - lm) / (2 * h)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)
    keep = np.maximum(np.abs(analytic), np.abs(numeric)) >= floor
    return float(rel[keep].max()), int(theta.size)


def test_gradients_match_finite_differences():
    start = time.perf_counter()
    err, n = gradient_check()
    assert n == 3862
    assert err < 1e-4
    assert time.perf_counter() - start < 60


def test_gradients_with_nonzero_biases():
    err, _ = gradient_check(seed=1, random_bias=True, floor=1e-7)
    assert err < 1e-4
