import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dctts import autodiff as ad
from dctts.autodiff import AutodiffError, ConvSpec, Parameter, Tensor


def _x(values, dtype=np.float64):
    return Tensor(np.asarray(values, dtype=dtype).reshape(1, 1, -1))


def _conv(x, w, spec, bias=None):
    w = Tensor(np.asarray(w, dtype=x.dtype).reshape(spec.weight_shape))
    b = Tensor(np.zeros(spec.out_channels, x.dtype) if bias is None else np.asarray(bias, x.dtype))
    return ad.conv1d(x, w, b, spec).data


# --- conv1d ------------------------------------------------------------------


def test_conv_identity_kernel():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 5)))
    w = np.zeros((3, 3, 1))
    w[[0, 1, 2], [0, 1, 2], 0] = 1
    out = _conv(x, w, ConvSpec(3, 3, 1, 1))
    np.testing.assert_array_equal(out, x.data)


def test_conv_causal_hand_values():
    out = _conv(_x([1, 2, 3, 4]), [1, 1, 1], ConvSpec(1, 1, 3, 1, causal=True))
    np.testing.assert_array_equal(out.ravel(), [1, 3, 6, 9])


def test_conv_causal_dilated_hand_values():
    out = _conv(_x([1, 2, 3, 4]), [1, 1, 1], ConvSpec(1, 1, 3, 2, causal=True))
    np.testing.assert_array_equal(out.ravel(), [1, 2, 4, 6])


def test_conv_noncausal_is_centered():
    # pads one zero on each side: [0,1,2,3,4,0]
    out = _conv(_x([1, 2, 3, 4]), [1, 1, 1], ConvSpec(1, 1, 3, 1))
    np.testing.assert_array_equal(out.ravel(), [3, 6, 9, 7])


def test_conv_bias_is_added():
    out = _conv(_x([0, 0, 0]), [1.0], ConvSpec(1, 1), bias=[2.5])
    np.testing.assert_array_equal(out.ravel(), [2.5, 2.5, 2.5])


def test_conv_errors():
    with pytest.raises(AutodiffError):
        ConvSpec(1, 1, 2, 1, causal=False)  # odd total padding
    with pytest.raises(AutodiffError):
        ConvSpec(1, 1, 0)
    with pytest.raises(AutodiffError):
        _conv(Tensor(np.zeros((1, 2, 4))), np.zeros(3), ConvSpec(1, 1, 3, 1, True))


@settings(max_examples=40, deadline=None)
@given(k=st.integers(1, 4), dil=st.sampled_from([1, 3, 9, 27]), T=st.integers(1, 40),
       causal=st.booleans())
def test_conv_preserves_length(k, dil, T, causal):
    if not causal and ((k - 1) * dil) % 2:
        k += 1
    spec = ConvSpec(2, 3, k, dil, causal)
    out = _conv(Tensor(np.ones((1, 2, T))), np.ones(spec.weight_shape), spec)
    assert out.shape == (1, 3, T)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 4), dil=st.integers(1, 5), t0=st.integers(0, 15), seed=st.integers(0, 1000))
def test_causal_conv_ignores_future(k, dil, t0, seed):
    rng = np.random.default_rng(seed)
    spec = ConvSpec(2, 2, k, dil, causal=True)
    w = rng.standard_normal(spec.weight_shape)
    x = rng.standard_normal((1, 2, 16))
    y = x.copy()
    y[:, :, t0:] += rng.standard_normal((1, 2, 16 - t0))
    a, b = _conv(Tensor(x), w, spec), _conv(Tensor(y), w, spec)
    np.testing.assert_array_equal(a[:, :, :t0], b[:, :, :t0])


# --- deconv, highway, elementwise -------------------------------------------


def test_deconv_hand_values():
    out = ad.deconv1d(_x([1, 2]), Tensor(np.ones((1, 1, 2))), Tensor(np.zeros(1))).data
    np.testing.assert_array_equal(out.ravel(), [1, 1, 2, 2])


def test_deconv_doubles_length_and_broadcasts_bias():
    out = ad.deconv1d(Tensor(np.zeros((2, 3, 64))), Tensor(np.ones((4, 3, 2))), Tensor(np.arange(4.0))).data
    assert out.shape == (2, 4, 128)
    np.testing.assert_array_equal(out, np.broadcast_to(np.arange(4.0)[None, :, None], out.shape))


def test_deconv_channel_mismatch():
    with pytest.raises(AutodiffError):
        ad.deconv1d(Tensor(np.zeros((1, 2, 3))), Tensor(np.ones((1, 3, 2))), Tensor(np.zeros(1)))


def test_highway_gate_limits():
    x = np.array([[[1.0, -2.0]]])
    h2 = np.array([[[5.0, 7.0]]])
    closed = ad.highway(Tensor(x), Tensor(np.concatenate([np.full_like(x, -80), h2], 1))).data
    opened = ad.highway(Tensor(x), Tensor(np.concatenate([np.full_like(x, 80), h2], 1))).data
    half = ad.highway(Tensor(x), Tensor(np.concatenate([np.zeros_like(x), h2], 1))).data
    np.testing.assert_allclose(closed, x, atol=1e-30)
    np.testing.assert_allclose(opened, h2, atol=1e-30)
    np.testing.assert_allclose(half, 0.5 * h2 + 0.5 * x)


def test_highway_zero_gate_conv_averages():
    # zero-initialized gate conv -> sigma = 0.5 everywhere
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((2, 4, 6)).astype(np.float32))
    spec = ConvSpec(4, 8, 3, 1)
    w = rng.standard_normal(spec.weight_shape).astype(np.float32)
    w[:4] = 0
    h = ad.conv1d(x, Tensor(w), Tensor(np.zeros(8, np.float32)), spec)
    out = ad.highway(x, h).data
    np.testing.assert_allclose(out, 0.5 * (h.data[:, 4:] + x.data), rtol=1e-6)


def test_highway_channel_check():
    with pytest.raises(AutodiffError):
        ad.highway(Tensor(np.zeros((1, 2, 3))), Tensor(np.zeros((1, 3, 3))))


def test_relu_and_concat():
    np.testing.assert_array_equal(ad.relu(_x([-1, 0, 2])).data.ravel(), [0, 0, 2])
    a, b = Tensor(np.zeros((1, 2, 3))), Tensor(np.ones((1, 2, 3)))
    assert ad.concat_channels(a, b).shape == (1, 4, 3)


def test_softmax_scalar_example():
    out = ad.softmax_over_rows(Tensor(np.array([[2.0], [0.0]]))).data.ravel()
    e2 = math.exp(2)
    np.testing.assert_allclose(out, [e2 / (e2 + 1), 1 / (e2 + 1)], rtol=1e-12)
    np.testing.assert_allclose(out, [0.8808, 0.1192], atol=5e-5)


@settings(max_examples=50, deadline=None)
@given(N=st.integers(1, 30), T=st.integers(1, 20), scale=st.floats(0.1, 200), seed=st.integers(0, 10**6))
def test_softmax_columns_are_distributions(N, T, scale, seed):
    x = np.random.default_rng(seed).standard_normal((2, N, T)).astype(np.float32) * scale
    out = ad.softmax_over_rows(Tensor(x)).data
    assert np.all(out >= 0) and np.all(out <= 1)
    np.testing.assert_allclose(out.sum(axis=1), 1, atol=1e-5)


def test_embed_maps_index_to_column():
    table = Tensor(np.arange(12.0).reshape(3, 4))
    out = ad.embed(np.array([[2, 0, 3]]), table).data
    np.testing.assert_array_equal(out[0], table.data[:, [2, 0, 3]])
    with pytest.raises(AutodiffError):
        ad.embed(np.array([[4]]), table)


# --- tape --------------------------------------------------------------------


def test_backward_linear_form():
    x = np.random.default_rng(0).standard_normal((1, 2, 3))
    w = Parameter(np.ones_like(x), "w")
    with ad.Tape() as tape:
        loss = ad.weighted_sum(w, x)
    grads = tape.backward(loss)
    np.testing.assert_array_equal(grads["w"], x)
    np.testing.assert_array_equal(w.grad, x)


def test_sigmoid_derivative_at_zero():
    z = Tensor(np.zeros((1, 1, 1)), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.mean(ad.sigmoid(z))
    tape.backward(loss)
    assert tape.grad(z).item() == pytest.approx(0.25)


def test_constant_leaves_get_no_gradient():
    x = Tensor(np.ones((1, 1, 2)))
    w = Parameter(np.ones((1, 1, 2)), "w")
    with ad.Tape() as tape:
        loss = ad.mean(ad.add(x, w))
    tape.backward(loss)
    assert tape.grad(x) is None


def test_backward_errors():
    w = Parameter(np.ones((1, 1, 2)), "w")
    with ad.Tape() as tape:
        out = ad.relu(w)
        loss = ad.mean(out)
    with pytest.raises(AutodiffError, match="scalar"):
        tape.backward(out)
    tape.backward(loss)
    with pytest.raises(AutodiffError, match="consumed"):
        tape.backward(loss)


def test_reused_tensor_accumulates():
    w = Parameter(np.full((1, 1, 1), 3.0), "w")
    with ad.Tape() as tape:
        loss = ad.mean(ad.add(w, w, w))
    tape.backward(loss)
    assert w.grad.item() == pytest.approx(3.0)


def test_no_tape_records_nothing():
    w = Parameter(np.ones((1, 1, 2)), "w")
    out = ad.relu(w)
    assert out.requires_grad and ad.active_tape() is None


def test_ops_preserve_dtype():
    for dt in (np.float32, np.float64):
        x = Tensor(np.ones((1, 2, 3), dt))
        spec = ConvSpec(2, 4, 3, 1, True)
        h = ad.conv1d(x, Tensor(np.ones(spec.weight_shape, dt)), Tensor(np.zeros(4, dt)), spec)
        assert ad.highway(x, h).dtype == dt
        assert ad.softmax_over_rows(x).dtype == dt


# --- init and optimizer ------------------------------------------------------


def test_he_init_std_and_determinism():
    a = ad.he_init((100000,), 2, np.random.default_rng(7), np.float64)
    assert abs(a.var() - 1.0) < 0.05
    fan_in = 384
    b = ad.he_init((100000,), fan_in, np.random.default_rng(8), np.float64)
    assert abs(b.var() / (2 / fan_in) - 1) < 0.05
    c = ad.he_init((100000,), fan_in, np.random.default_rng(8), np.float64)
    np.testing.assert_array_equal(b, c)
    with pytest.raises(AutodiffError):
        ad.he_init((3,), 0, np.random.default_rng(0))


def test_adam_first_step_is_signed_alpha():
    p = Parameter(np.zeros(5, np.float64), "p")
    p.grad = np.array([1.0, -2.0, 0.5, 3.0, -0.1])
    ad.adam_step([p], ad.AdamConfig())
    expected = -2e-4 * p.grad / (np.abs(p.grad) + 1e-6)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)
    np.testing.assert_allclose(np.abs(p.data), 2e-4, rtol=1e-5)
    assert p.step == 1


def test_adam_zero_gradient_still_counts():
    p = Parameter(np.ones(3, np.float32), "p")
    ad.adam_step([p])
    np.testing.assert_array_equal(p.data, 1)
    assert p.step == 1


def test_adam_matches_reference_over_steps():
    rng = np.random.default_rng(2)
    p = Parameter(rng.standard_normal(50), "p")
    value, m, v = p.data.copy(), np.zeros(50), np.zeros(50)
    b1, b2, lr, eps = 0.5, 0.9, 2e-4, 1e-6
    for t in range(1, 6):
        g = rng.standard_normal(50)
        p.grad = g
        ad.adam_step([p])
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        value = value - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    np.testing.assert_allclose(p.data, value, rtol=1e-12)


def test_adam_shape_drift():
    p = Parameter(np.ones(3), "p")
    p.grad = np.ones(4)
    with pytest.raises(AutodiffError):
        ad.adam_step([p])
