import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diverse_selftrain import nn
from diverse_selftrain.errors import LabelError, ShapeError


def fd(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


def test_softmax_relu_examples():
    np.testing.assert_array_equal(nn.softmax_rows([[0.0, 0.0]]), [[0.5, 0.5]])
    np.testing.assert_array_equal(nn.relu(np.array([-1.0, 2.0])), [0.0, 2.0])
    with pytest.raises(ShapeError):
        nn.softmax_rows([1.0, 2.0])


def test_softmax_overflow_against_high_precision():
    logits = np.array([[1000.0, -1000.0, 999.0], [710.0, 709.0, -5.0]])
    p = nn.softmax_rows(logits)
    mpmath.mp.dps = 60
    for row, got in zip(logits, p):
        z = [mpmath.exp(mpmath.mpf(v)) for v in row]
        tot = sum(z)
        ref = [float(v / tot) for v in z]
        np.testing.assert_allclose(got, ref, rtol=1e-14, atol=1e-300)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-15)


@given(arrays(np.float64, (3, 4), elements=st.floats(-700, 700)))
def test_softmax_rows_in_simplex(x):
    p = nn.softmax_rows(x)
    assert np.all(p >= 0) and np.all(p <= 1)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_cross_entropy_examples():
    loss, _ = nn.cross_entropy(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([1, 0]))
    assert loss == 0.0
    loss, _ = nn.cross_entropy(np.full((3, 4), 0.25), np.array([0, 1, 3]))
    assert abs(loss - math.log(4)) < 1e-15
    loss, _ = nn.cross_entropy(np.array([[1.0, 0.0]]), np.array([1]))
    assert abs(loss - (-math.log(1e-12))) < 1e-9
    with pytest.raises(LabelError):
        nn.cross_entropy(np.full((1, 2), 0.5), np.array([2]))


def test_cross_entropy_gradient_fd(rng):
    logits = rng.normal(size=(6, 4))
    y = rng.integers(0, 4, 6)
    _, g = nn.cross_entropy(nn.softmax_rows(logits), y)
    num = fd(lambda: nn.cross_entropy(nn.softmax_rows(logits), y)[0], logits)
    assert rel_err(g, num) <= 1e-6


def test_layer_stack_backward_fd(rng):
    layers = [nn.LinearLayer(3, 5, rng), nn.LinearLayer(5, 4, rng)]
    x = rng.normal(size=(7, 3))
    y = rng.integers(0, 4, 7)

    def loss():
        return nn.cross_entropy(nn.softmax_rows(nn.run_stack(layers, x)), y)[0]

    tape = nn.ForwardTape()
    out = nn.run_stack(layers, x, tape)
    _, g = nn.cross_entropy(nn.softmax_rows(out), y)
    gx = tape.backward(g)
    for layer in layers:
        assert rel_err(layer.grad_weight, fd(loss, layer.weight)) <= 1e-5
        assert rel_err(layer.grad_bias, fd(loss, layer.bias)) <= 1e-5
    assert rel_err(gx, fd(loss, x)) <= 1e-5


def test_softmax_backward_fd(rng):
    logits = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 3))
    p = nn.softmax_rows(logits)
    g = nn.softmax_backward(p, w)
    assert rel_err(g, fd(lambda: float(np.sum(w * nn.softmax_rows(logits))), logits)) <= 1e-6


def test_tape_consumed_once_and_stop_gradient(rng):
    layer = nn.LinearLayer(2, 2, rng)
    tape = nn.ForwardTape()
    out = tape.linear(layer, rng.normal(size=(3, 2)))
    stopped = tape.stop_gradient()
    assert not np.any(stopped.backward(np.ones_like(out)))
    assert not np.any(layer.grad_weight)
    tape.backward(np.ones_like(out))
    with pytest.raises(RuntimeError):
        tape.backward(np.ones_like(out))


def test_zero_grad_and_shapes(rng):
    layer = nn.LinearLayer(3, 2, rng)
    layer.backward(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)))
    assert layer.grad_weight.shape == layer.weight.shape
    layer.zero_grad()
    assert not np.any(layer.grad_weight) and not np.any(layer.grad_bias)
    with pytest.raises(ShapeError):
        nn.forward_linear(layer, np.ones((2, 5)))


def test_glorot_bounds(rng):
    layer = nn.LinearLayer(30, 20, rng)
    assert np.max(np.abs(layer.weight)) <= math.sqrt(6 / 50)
    assert not np.any(layer.bias)


def test_adam_examples():
    p = [np.array([0.5])]
    state = nn.AdamState()
    nn.adam_step(state, p, [np.array([1.0])])
    # bias-corrected first step: lr * 1 / (1 + eps)
    assert abs(p[0][0] - (0.5 - 0.001 / (1 + 1e-8))) < 1e-12
    q = [np.array([1.0, 2.0])]
    nn.adam_step(nn.AdamState(), q, [np.zeros(2)])
    np.testing.assert_array_equal(q[0], [1.0, 2.0])


def test_adam_identical_params_stay_identical(rng):
    a, b = np.ones(3), np.ones(3)
    sa, sb = nn.AdamState(), nn.AdamState()
    for _ in range(100):
        g = rng.normal(size=3)
        nn.adam_step(sa, [a], [g])
        nn.adam_step(sb, [b], [g.copy()])
        assert sa.step == sb.step
    np.testing.assert_array_equal(a, b)


def test_snapshot_round_trip(rng):
    layers = {"a": nn.LinearLayer(3, 2, rng), "b": nn.LinearLayer(2, 4, rng)}
    back = nn.restore(nn.snapshot(layers))
    for k in layers:
        np.testing.assert_array_equal(back[k].weight, layers[k].weight)
        np.testing.assert_array_equal(back[k].bias, layers[k].bias)
    with pytest.raises(ValueError):
        nn.restore('{"schema": "other", "layers": {}}')
