import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqdrop.errors import NumericError, ShapeError
from freqdrop.layers import (
    ConvLayer,
    DenseLayer,
    clip_grad_norm,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    kaiming_uniform,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    softmax,
    softmax_xent,
)

from oracles import conv2d_loop, maxpool_loop, numeric_grad, rel_error


def conv_layer(g, o, c, k, stride=1, padding=0):
    return ConvLayer(g.normal(size=(o, c, k, k)), g.normal(size=o), stride, padding)


# -- conv ------------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 2),
    st.integers(1, 4),
    st.integers(1, 4),
    st.integers(3, 8),
    st.integers(3, 8),
    st.sampled_from([1, 3, 5]),
    st.integers(1, 2),
    st.integers(0, 2),
    st.integers(0, 2**32 - 1),
)
def test_conv_forward_matches_oracle(n, c, o, h, w, k, stride, pad, seed):
    if h + 2 * pad < k or w + 2 * pad < k:
        return
    g = np.random.default_rng(seed)
    layer = conv_layer(g, o, c, k, stride, pad)
    x = g.normal(size=(n, c, h, w))
    expect = conv2d_loop(x, layer.weights, layer.bias, stride, pad)
    np.testing.assert_allclose(conv2d_forward(x, layer), expect, rtol=0, atol=1e-12)


def test_conv_output_size():
    layer = ConvLayer(np.zeros((2, 1, 3, 3)), np.zeros(2), 2, 1)
    assert conv2d_forward(np.zeros((1, 1, 7, 8)), layer).shape == (1, 2, 4, 4)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_backward_finite_differences(stride, pad):
    g = np.random.default_rng(3)
    layer = conv_layer(g, 3, 2, 3, stride, pad)
    x = g.normal(size=(2, 2, 6, 5))
    w = g.normal(size=conv2d_forward(x, layer).shape)
    loss = lambda: float(np.sum(conv2d_forward(x, layer) * w))
    gx, gw, gb = conv2d_backward(w, x, layer)
    assert rel_error(gx, numeric_grad(loss, x)) < 1e-6
    assert rel_error(gw, numeric_grad(loss, layer.weights)) < 1e-6
    assert rel_error(gb, numeric_grad(loss, layer.bias)) < 1e-6


def test_conv_backward_skip_grad_x():
    g = np.random.default_rng(0)
    layer = conv_layer(g, 2, 1, 3, 1, 1)
    x = g.normal(size=(1, 1, 4, 4))
    gx, gw, gb = conv2d_backward(np.ones((1, 2, 4, 4)), x, layer, need_grad_x=False)
    assert gx is None and gw.shape == layer.weights.shape and gb.shape == (2,)


def test_conv_shape_errors():
    layer = ConvLayer(np.zeros((2, 3, 3, 3)), np.zeros(2))
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((1, 2, 5, 5)), layer)
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((1, 3, 2, 2)), layer)
    with pytest.raises(ShapeError):
        conv2d_backward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 5, 5)), layer)
    with pytest.raises(ShapeError):
        ConvLayer(np.zeros((2, 3, 2, 2)), np.zeros(2))
    with pytest.raises(ShapeError):
        ConvLayer(np.zeros((2, 3, 3, 3)), np.zeros(3))


def test_conv_nonfinite_raises():
    layer = ConvLayer(np.ones((1, 1, 3, 3)), np.zeros(1))
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = np.inf
    with pytest.raises(NumericError):
        conv2d_forward(x, layer)


# -- relu / pool ------------------------------------------------------------------


def test_relu():
    x = np.array([[-1.0, 0.0, 2.0]]).reshape(1, 1, 1, 3)
    assert relu_forward(x).ravel().tolist() == [0.0, 0.0, 2.0]
    assert relu_backward(np.ones_like(x), x).ravel().tolist() == [0.0, 0.0, 1.0]


def test_relu_finite_differences():
    g = np.random.default_rng(1)
    x = g.normal(size=(2, 3, 4, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    w = g.normal(size=x.shape)
    num = numeric_grad(lambda: float(np.sum(relu_forward(x) * w)), x)
    assert rel_error(relu_backward(w, x), num) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(2, 9), st.integers(2, 9), st.integers(0, 2**32 - 1))
def test_maxpool_matches_oracle(n, c, h, w, seed):
    x = np.random.default_rng(seed).normal(size=(n, c, h, w))
    out, _ = maxpool2_forward(x)
    np.testing.assert_array_equal(out, maxpool_loop(x))


def test_maxpool_ties_go_to_first():
    x = np.ones((1, 1, 2, 2))
    out, arg = maxpool2_forward(x)
    g = maxpool2_backward(np.ones((1, 1, 1, 1)), arg, x.shape)
    assert g.ravel().tolist() == [1.0, 0.0, 0.0, 0.0]


def test_maxpool_odd_input_and_backward():
    g = np.random.default_rng(2)
    x = g.normal(size=(2, 3, 5, 7))
    w = g.normal(size=(2, 3, 2, 3))
    out, arg = maxpool2_forward(x)
    assert out.shape == (2, 3, 2, 3)
    num = numeric_grad(lambda: float(np.sum(maxpool2_forward(x)[0] * w)), x)
    assert rel_error(maxpool2_backward(w, arg, x.shape), num) < 1e-6


def test_maxpool_too_small():
    with pytest.raises(ShapeError):
        maxpool2_forward(np.zeros((1, 1, 1, 4)))


# -- dense / softmax ------------------------------------------------------------------


def test_dense_finite_differences():
    g = np.random.default_rng(4)
    layer = DenseLayer(g.normal(size=(6, 3)), g.normal(size=3))
    x = g.normal(size=(4, 6))
    w = g.normal(size=(4, 3))
    loss = lambda: float(np.sum(dense_forward(x, layer) * w))
    gx, gw, gb = dense_backward(w, x, layer)
    assert rel_error(gx, numeric_grad(loss, x)) < 1e-6
    assert rel_error(gw, numeric_grad(loss, layer.weights)) < 1e-6
    assert rel_error(gb, numeric_grad(loss, layer.bias)) < 1e-6


def test_softmax_xent_value_and_gradient():
    g = np.random.default_rng(5)
    z = g.normal(size=(5, 4))
    y = g.integers(0, 4, size=5)
    loss, grad = softmax_xent(z, y)
    p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
    assert loss == pytest.approx(-np.mean(np.log(p[np.arange(5), y])), rel=1e-13)
    num = numeric_grad(lambda: softmax_xent(z, y)[0], z)
    assert rel_error(grad, num) < 1e-6


def test_softmax_stable_for_large_logits():
    z = np.array([[1000.0, 0.0], [-1000.0, 1000.0]])
    np.testing.assert_allclose(softmax(z).sum(1), 1.0)
    loss, _ = softmax_xent(z, np.array([0, 1]))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_softmax_uniform_logits():
    loss, _ = softmax_xent(np.zeros((3, 2)), np.array([0, 1, 0]))
    assert loss == pytest.approx(math.log(2))


def test_softmax_label_errors():
    with pytest.raises(ShapeError):
        softmax_xent(np.zeros((2, 2)), np.array([0, 2]))
    with pytest.raises(ShapeError):
        softmax_xent(np.zeros((2, 2)), np.array([0]))


# -- optimizer / init ---------------------------------------------------------------


def test_sgd_momentum_and_weight_decay_by_hand():
    p = {"w": np.array([1.0, -2.0])}
    g1, g2 = np.array([0.5, 0.5]), np.array([-1.0, 2.0])
    lr, m, wd = 0.1, 0.9, 0.01
    _, vel = sgd_step(p, {"w": g1}, lr, m, wd)
    v1 = g1 + wd * np.array([1.0, -2.0])
    w1 = np.array([1.0, -2.0]) - lr * v1
    np.testing.assert_allclose(p["w"], w1, rtol=1e-15)
    sgd_step(p, {"w": g2}, lr, m, wd, vel)
    v2 = m * v1 + g2 + wd * w1
    np.testing.assert_allclose(p["w"], w1 - lr * v2, rtol=1e-15)


def test_sgd_rejects_nonfinite_and_bad_args():
    with pytest.raises(NumericError):
        sgd_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, 0.1)
    with pytest.raises(ValueError):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(2)}, 0.1, momentum=1.0)
    with pytest.raises(ShapeError):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, 0.1)


def test_clip_grad_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_grad_norm(grads, 1.0)
    assert norm == 5.0
    assert clipped["a"][0] == pytest.approx(0.6) and clipped["b"][0] == pytest.approx(0.8)
    same, _ = clip_grad_norm(grads, 10.0)
    assert same is grads
    off, _ = clip_grad_norm(grads, 0)
    assert off is grads
    with pytest.raises(NumericError):
        clip_grad_norm({"a": np.array([np.inf])}, 1.0)


def test_kaiming_uniform_bound():
    w = kaiming_uniform((64, 32, 3, 3), 32 * 9, np.random.default_rng(0))
    bound = math.sqrt(6 / (32 * 9))
    assert np.abs(w).max() <= bound
    assert np.abs(w).max() > 0.99 * bound
