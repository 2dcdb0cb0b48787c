import math

import numpy as np
import pytest

from dptext.autodiff import (AdamWState, ConfigError, GradTape, ShapeError, Tensor, adamw_step,
                             clip_grad_norm, multi_head_attention, no_grad, ops)
from dptext.autodiff.gradcheck import OP_REGISTRY, check_function, check_op, relative_error


def test_softmax_uniform():
    out = ops.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_inverse_sigmoid_roundtrip():
    x = ops.inverse_sigmoid(ops.sigmoid(Tensor(1.7)))
    assert abs(x.item() - 1.7) < 1e-9


def test_focal_loss_perfect_prediction_is_zero():
    assert ops.focal_loss(Tensor([1.0]), Tensor([1.0]), alpha=0.25, gamma=2.0).item() == 0.0


def test_layer_norm_unit_affine():
    out = ops.layer_norm(Tensor([1.0, 2.0, 3.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, [-1.2247, 0.0, 1.2247], atol=1e-3)


def test_circular_conv_identity_and_wraparound():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(4, 1), requires_grad=True)
    ident = ops.circular_conv1d(x, Tensor(np.array([0.0, 1.0, 0.0]).reshape(1, 1, 3)))
    np.testing.assert_array_equal(ident.data.ravel(), [1, 2, 3, 4])
    ones = ops.circular_conv1d(x, Tensor(np.ones((1, 1, 3))))
    np.testing.assert_array_equal(ones.data.ravel(), [7, 6, 9, 8])
    ones.sum().backward()
    np.testing.assert_array_equal(x.grad.ravel(), [3, 3, 3, 3])


def test_circular_conv_kernel_errors():
    x = Tensor(np.zeros((4, 1)))
    with pytest.raises(ConfigError):
        ops.circular_conv1d(x, Tensor(np.zeros((1, 1, 2))))
    with pytest.raises(ConfigError):
        ops.circular_conv1d(x, Tensor(np.zeros((1, 1, 5))))
    with pytest.raises(ShapeError):
        ops.circular_conv1d(x, Tensor(np.zeros((1, 2, 3))))


def test_sine_encoding_zero_and_split():
    enc = ops.sine_positional_encoding(Tensor([0.0, 0.0]), 16).data
    np.testing.assert_array_equal(enc[0::2], 0.0)
    np.testing.assert_array_equal(enc[1::2], 1.0)
    both = ops.sine_positional_encoding(Tensor([0.3, 0.7]), 16).data
    x_only = ops.sine_positional_encoding(Tensor([0.3]), 16).data
    y_only = ops.sine_positional_encoding(Tensor([0.7]), 16).data
    np.testing.assert_array_equal(both, np.concatenate([x_only, y_only]))
    with pytest.raises(ConfigError):
        ops.sine_positional_encoding(Tensor([0.1, 0.2]), 6)


def test_sine_encoding_gradcheck_at_point():
    err = check_function(lambda p: ops.sine_positional_encoding(p, 16), [Tensor([0.3, 0.7])])
    assert err < 1e-4


def test_attention_single_key_returns_value():
    rng = np.random.default_rng(0)
    q = Tensor(rng.standard_normal((1, 8)))
    v = Tensor(rng.standard_normal((1, 8)))
    out = multi_head_attention(q, q, v, n_heads=2)
    np.testing.assert_allclose(out.data, v.data, atol=1e-12)


def test_attention_key_permutation_invariance():
    rng = np.random.default_rng(1)
    q, k, v = (Tensor(rng.standard_normal((3, 8))) for _ in range(3))
    perm = np.array([2, 0, 1])
    a = multi_head_attention(q, k, v, 4).data
    b = multi_head_attention(q, Tensor(k.data[perm]), Tensor(v.data[perm]), 4).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    with pytest.raises(ConfigError):
        multi_head_attention(q, k, v, 3)


def test_attention_gradcheck_2x3x8():
    rng = np.random.default_rng(2)
    inputs = [Tensor(rng.standard_normal((2, 3, 8))) for _ in range(3)]
    err = check_function(lambda q, k, v: multi_head_attention(q, k, v, 2), inputs, rng=rng)
    assert err < 1e-4


def test_bilinear_grid_point_constant_and_centre():
    rng = np.random.default_rng(3)
    fm = rng.standard_normal((1, 3, 4, 2))
    # pixel (i=1, j=2) centre
    loc = np.array([[[2.5 / 4, 1.5 / 3]]])
    np.testing.assert_allclose(ops.bilinear_sample(Tensor(fm), Tensor(loc)).data[0, 0], fm[0, 1, 2], atol=1e-12)
    const = np.full((1, 3, 4, 2), 0.7)
    locs = rng.uniform(-0.2, 1.2, (1, 10, 2))
    np.testing.assert_allclose(ops.bilinear_sample(Tensor(const), Tensor(locs)).data, 0.7, atol=1e-12)
    small = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 2, 2, 1)
    centre = ops.bilinear_sample(Tensor(small), Tensor([[[0.5, 0.5]]])).data
    assert centre.item() == pytest.approx(1.5, abs=1e-12)


def test_adamw_zero_grad_no_decay_is_noop():
    p = Tensor(np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    adamw_step({"p": p}, AdamWState(), lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamw_first_step_and_decay():
    p = Tensor(np.array([0.0]))
    p.grad = np.array([1.0])
    adamw_step({"p": p}, AdamWState(), lr=0.1, weight_decay=0.0)
    assert p.data[0] == pytest.approx(-0.1, abs=1e-6)
    q = Tensor(np.array([2.0]))
    q.grad = np.array([0.0])
    adamw_step({"q": q}, AdamWState(), lr=0.1, weight_decay=0.1)
    assert q.data[0] == pytest.approx(2.0 * (1 - 0.01), abs=1e-12)


def test_adamw_rejects_nan_without_touching_params():
    p = Tensor(np.array([1.0]))
    p.grad = np.array([np.nan])
    state = AdamWState()
    with pytest.raises(FloatingPointError):
        adamw_step({"p": p}, state, lr=0.1)
    assert p.data[0] == 1.0 and state.step == 0


def test_clip_grad_norm():
    p = Tensor(np.zeros(2))
    p.grad = np.array([3.0, 4.0])
    total = clip_grad_norm([p], 0.1)
    assert total == pytest.approx(5.0)
    assert np.linalg.norm(p.grad) == pytest.approx(0.1, rel=1e-5)


def test_shared_subexpression_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x + x
    y.backward()
    assert x.grad.item() == pytest.approx(7.0)
    assert len(GradTape.from_root(y)) >= 3


def test_no_grad_skips_tape():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = ops.exp(x)
    assert not y.requires_grad


def test_broadcast_shape_error():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


@pytest.mark.parametrize("name", sorted(OP_REGISTRY))
def test_registered_op_gradcheck(name):
    result = check_op(name, seeds=range(10))
    assert result.passed, f"{name}: {result.max_rel_error:.3e}"


def test_corrupted_backward_is_caught():
    def bad_exp(a):
        out = ops.exp(a)
        orig = out._backward
        out._backward = lambda g: tuple(2.0 * x for x in orig(g))
        return out

    registry = {"bad_exp": lambda r: (bad_exp, [Tensor(r.standard_normal(3))])}
    assert not check_op("bad_exp", seeds=range(2), registry=registry).passed


def test_conv2d_shapes():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((2, 8, 8, 3)))
    w = Tensor(rng.standard_normal((5, 3, 3, 3)))
    out = ops.conv2d(x, w, None, stride=2, padding=1)
    assert out.shape == (2, 4, 4, 5)
    assert math.isfinite(out.data.sum())
