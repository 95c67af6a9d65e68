import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dctts import autodiff as ad
from dctts import losses
from dctts.autodiff import Tensor


def test_half_against_half_is_ln2():
    Y = np.full((4, 5), 0.5)
    assert losses.bin_divergence(Y, Y) == pytest.approx(math.log(2), abs=1e-12)
    assert losses.bin_divergence(Y, Y) == pytest.approx(0.69315, abs=5e-6)


def test_divergence_vanishes_as_prediction_meets_silent_target():
    S = np.zeros(3)
    vals = [losses.bin_divergence(np.full(3, y), S) for y in (1e-2, 1e-4, 1e-8)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-7


def test_bin_divergence_rejects_closed_interval():
    with pytest.raises(ValueError):
        losses.bin_divergence(np.array([0.0, 0.5]), np.array([0.0, 0.5]))
    with pytest.raises(ValueError):
        losses.bin_divergence(np.array([1.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        losses.spec_loss(np.full(3, 0.5), np.full(4, 0.5))


def test_l1_term_of_spec_loss():
    S, Y = np.full((2, 2), 0.5), np.full((2, 2), 0.6)
    assert losses.spec_loss(Y, S) - losses.bin_divergence(Y, S) == pytest.approx(0.1)
    assert losses.spec_loss(S, S) == pytest.approx(losses.entropy_floor(S))


def test_logit_form_matches_probability_form(rng):
    z = rng.standard_normal((3, 4, 5))
    S = rng.random((3, 4, 5))
    Y = 1 / (1 + np.exp(-z))
    val = losses.bin_divergence_logits(Tensor(z), S).data
    assert float(val) == pytest.approx(losses.bin_divergence(Y, S), rel=1e-12)


def test_logit_gradient_is_prediction_minus_target(rng):
    z = rng.standard_normal((2, 3, 4))
    S = rng.random((2, 3, 4))
    zt = Tensor(z, requires_grad=True)
    with ad.Tape() as tape:
        out = losses.bin_divergence_logits(zt, S)
    tape.backward(out)
    np.testing.assert_allclose(tape.grad(zt), (1 / (1 + np.exp(-z)) - S) / z.size, rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_spec_loss_never_below_entropy_floor(seed):
    r = np.random.default_rng(seed)
    S = r.random((6, 5))
    Y = np.clip(r.random((6, 5)), 1e-6, 1 - 1e-6)
    assert losses.spec_loss(Y, S) - losses.entropy_floor(S) > 0


def test_guided_weight_at_concentrated_cell():
    N = T = 100
    W = losses.guided_weights(N, T, 0.2)
    assert W[50, 70] == pytest.approx(1 - math.exp(-0.5), rel=1e-12)
    assert W[50, 70] == pytest.approx(0.39347, abs=5e-6)
    A = np.zeros((N, T))
    A[50, :] = 1
    # the column for t = 70 contributes exactly W[50, 70]
    assert (A * W)[:, 70].sum() == pytest.approx(0.39347, abs=5e-6)


def test_diagonal_attention_costs_nothing():
    A = np.eye(40)
    assert losses.guided_attention_loss(A, losses.guided_weights(40, 40)) == 0.0


def test_anti_diagonal_by_brute_force():
    N = T = 100
    total = 0.0
    for t in range(T):
        n = N - 1 - t
        total += 1 - math.exp(-((n / N - t / T) ** 2) / (2 * 0.2 ** 2))
    A = np.fliplr(np.eye(N))
    assert losses.guided_attention_loss(A, losses.guided_weights(N, T)) == pytest.approx(total / (N * T), rel=1e-12)


def test_guide_weight_properties():
    N, T = 17, 29
    W = losses.guided_weights(N, T)
    assert W.min() >= 0 and W.max() < 1
    dist = np.abs(np.arange(N)[:, None] / N - np.arange(T)[None, :] / T)
    assert np.all((W == 0) == (dist == 0))
    order = np.argsort(dist, axis=None, kind="stable")
    assert np.all(np.diff(W.ravel()[order]) >= -1e-15)


def test_guided_loss_is_linear(rng):
    W = losses.guided_weights(8, 11)
    A1, A2 = rng.random((8, 11)), rng.random((8, 11))
    lhs = losses.guided_attention_loss(2 * A1 - 0.5 * A2, W)
    rhs = 2 * losses.guided_attention_loss(A1, W) - 0.5 * losses.guided_attention_loss(A2, W)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    with pytest.raises(ValueError):
        losses.guided_attention_loss(A1, W[:, :10])


def test_masked_elements_get_zero_gradient(rng):
    B, F, T = 2, 3, 6
    z = rng.standard_normal((B, F, T))
    S = rng.random((B, F, T))
    mask = losses.time_mask([4, 6], T)
    zt = Tensor(z, requires_grad=True)
    At = Tensor(rng.random((B, 5, T)), requires_grad=True)
    W, amask = losses.batch_guided_weights([3, 5], [4, 6], 5, T)
    with ad.Tape() as tape:
        Y = ad.sigmoid(zt)
        total = ad.add(losses.bin_divergence_logits(zt, S, mask), losses.l1_loss(Y, S, mask),
                       losses.attention_loss(At, W, amask))
    tape.backward(total)
    gz, gA = tape.grad(zt), tape.grad(At)
    assert not gz[0, :, 4:].any()
    assert gz[0, :, :4].all() and gz[1].all()
    assert not gA[~amask].any()
    # the masked mean divides by the valid count only
    ref = losses.bin_divergence(1 / (1 + np.exp(-z[0, :, :4])), S[0, :, :4]) * 12
    ref += losses.bin_divergence(1 / (1 + np.exp(-z[1])), S[1]) * 18
    assert float(losses.bin_divergence_logits(Tensor(z), S, mask).data) == pytest.approx(ref / 30, rel=1e-12)


def test_loss_report_finite():
    assert losses.LossReport(1, 2, 3, 6).finite()
    assert not losses.LossReport(1, float("nan"), 3, 6).finite()
