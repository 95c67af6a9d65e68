"""Central finite-difference checks for every tape operation.

Each case draws random small shapes, contracts the op output with a fixed
random probe ``r`` into the scalar ``sum(out * r)``, and compares the tape
gradient against ``(f(x + eps) - f(x - eps)) / (2 eps)`` element by element.
The reported error is norm-wise over the op's whole gradient (all inputs
concatenated): ``|g_tape - g_fd| / max(|g_tape|, |g_fd|)``. A per-input norm
would blow up on a bias whose gradient is a near-cancelling probe sum.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses

EPS = 1e-3
TOLERANCE = {np.dtype(np.float32): 1e-2, np.dtype(np.float64): 1e-5}


@dataclass
class OpResult:
    op: str
    shapes: int
    max_error: float
    seconds: float

    def passed(self, dtype) -> bool:
        return self.max_error < TOLERANCE[np.dtype(dtype)]


def _away_from_zero(rng, shape, margin=0.05):
    # keeps relu / |x| kinks farther than EPS from every sample
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x) + np.sign(x) * 0.01


def _case_conv(rng, causal):
    k = int(rng.integers(1, 5))
    dil = int(rng.integers(1, 4))
    if not causal and ((k - 1) * dil) % 2:
        k += 1
    spec = ad.ConvSpec(int(rng.integers(1, 4)), int(rng.integers(1, 4)), k, dil, causal)
    B, T = int(rng.integers(1, 3)), int(rng.integers(2, 9))
    inputs = [rng.standard_normal((B, spec.in_channels, T)),
              rng.standard_normal(spec.weight_shape) * 0.5,
              rng.standard_normal(spec.out_channels)]
    return inputs, lambda x, w, b: ad.conv1d(x, w, b, spec)


def _case_deconv(rng):
    B, I, O, T = (int(v) for v in rng.integers(1, 4, size=4))
    inputs = [rng.standard_normal((B, I, T)), rng.standard_normal((O, I, 2)), rng.standard_normal(O)]
    return inputs, ad.deconv1d


def _case_highway(rng):
    B, C, T = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
    return [rng.standard_normal((B, C, T)), rng.standard_normal((B, 2 * C, T)) * 2], ad.highway


def _shape3(rng):
    return (int(rng.integers(1, 3)), int(rng.integers(1, 5)), int(rng.integers(1, 6)))


def _case_relu(rng):
    return [_away_from_zero(rng, _shape3(rng))], ad.relu


def _case_sigmoid(rng):
    return [rng.standard_normal(_shape3(rng)) * 3], ad.sigmoid


def _case_scale(rng):
    f = float(rng.uniform(-2, 2))
    return [rng.standard_normal(_shape3(rng))], lambda x: ad.scale(x, f)


def _case_add(rng):
    s = _shape3(rng)
    n = int(rng.integers(2, 4))
    return [rng.standard_normal(s) for _ in range(n)], ad.add


def _case_concat(rng):
    B, T = int(rng.integers(1, 3)), int(rng.integers(1, 6))
    return [rng.standard_normal((B, int(rng.integers(1, 4)), T)),
            rng.standard_normal((B, int(rng.integers(1, 4)), T))], ad.concat_channels


def _case_split(rng):
    B, C, T = int(rng.integers(1, 3)), int(rng.integers(2, 6)), int(rng.integers(1, 6))
    at = int(rng.integers(1, C))
    # both halves feed the probe so each backward path is exercised
    return [rng.standard_normal((B, C, T))], lambda x: ad.concat_channels(*reversed(ad.split_channels(x, at)))


def _case_bmm(rng):
    B, M, K, N = (int(v) for v in rng.integers(1, 5, size=4))
    if rng.random() < 0.5:
        return [rng.standard_normal((B, K, M)), rng.standard_normal((B, K, N))], \
            lambda a, b: ad.bmm(a, b, transpose_a=True)
    return [rng.standard_normal((B, M, K)), rng.standard_normal((B, K, N))], ad.bmm


def _case_matmul(rng):
    M, K, N = (int(v) for v in rng.integers(1, 6, size=3))
    return [rng.standard_normal((M, K)), rng.standard_normal((K, N))], ad.matmul


def _case_softmax(rng):
    if rng.random() < 0.5:
        return [rng.standard_normal((int(rng.integers(1, 6)), int(rng.integers(1, 5))))], ad.softmax_over_rows
    return [rng.standard_normal(_shape3(rng))], ad.softmax_over_rows


def _case_embed(rng):
    vocab, e = int(rng.integers(2, 8)), int(rng.integers(1, 5))
    idx = rng.integers(0, vocab, size=(int(rng.integers(1, 3)), int(rng.integers(1, 7))))
    return [rng.standard_normal((e, vocab))], lambda t: ad.embed(idx, t)


def _case_mean(rng):
    return [rng.standard_normal(_shape3(rng))], ad.mean


def _case_weighted_sum(rng):
    s = _shape3(rng)
    w = rng.standard_normal(s)
    return [rng.standard_normal(s)], lambda x: ad.weighted_sum(x, w)


def _random_mask(rng, B, T):
    lengths = rng.integers(1, T + 1, size=B)
    return losses.time_mask(lengths, T)


def _case_l1(rng):
    B, F, T = _shape3(rng)
    S = rng.random((B, F, T))
    y = S + _away_from_zero(rng, (B, F, T)) * 0.3
    mask = _random_mask(rng, B, T)
    return [y], lambda Y: losses.l1_loss(Y, S, mask)


def _case_bin_div(rng):
    B, F, T = _shape3(rng)
    S = rng.random((B, F, T))
    mask = _random_mask(rng, B, T)
    return [rng.standard_normal((B, F, T)) * 2], lambda z: losses.bin_divergence_logits(z, S, mask)


def _case_attention(rng):
    B, N, T = _shape3(rng)
    W = rng.random((B, N, T))
    mask = rng.random((B, N, T)) < 0.7
    return [rng.random((B, N, T))], lambda A: losses.attention_loss(A, W, mask)


CASES = {
    "conv1d_causal": lambda rng: _case_conv(rng, True),
    "conv1d_noncausal": lambda rng: _case_conv(rng, False),
    "deconv1d": _case_deconv,
    "highway": _case_highway,
    "relu": _case_relu,
    "sigmoid": _case_sigmoid,
    "scale": _case_scale,
    "add": _case_add,
    "concat_channels": _case_concat,
    "split_channels": _case_split,
    "bmm": _case_bmm,
    "matmul": _case_matmul,
    "softmax_over_rows": _case_softmax,
    "embed": _case_embed,
    "mean": _case_mean,
    "weighted_sum": _case_weighted_sum,
    "l1_loss": _case_l1,
    "bin_divergence_logits": _case_bin_div,
    "attention_loss": _case_attention,
}


def _scalar(fn, arrays, probe, dtype):
    out = fn(*[ad.Tensor(a, dtype=dtype) for a in arrays]).data
    # accumulate in float64 so the probe contraction adds no rounding of its own
    return float(np.sum(out.astype(np.float64) * probe))


def check_once(fn, inputs, dtype, rng, eps: float = EPS) -> float:
    """Norm-wise relative error between tape and finite-difference gradients."""
    arrays = [np.asarray(a, dtype=dtype) for a in inputs]
    leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        out = fn(*leaves)
    probe = rng.standard_normal(out.shape)
    with tape:
        loss = ad.weighted_sum(out, probe)
    tape.backward(loss)
    tape_parts, fd_parts = [], []
    for i, a in enumerate(arrays):
        analytic = tape.grad(leaves[i])
        analytic = np.zeros(a.shape) if analytic is None else np.asarray(analytic, dtype=np.float64)
        numeric = np.zeros(a.shape)
        for j in range(a.size):
            orig = a.flat[j]
            a.flat[j] = orig + eps
            up = _scalar(fn, arrays, probe, dtype)
            a.flat[j] = orig - eps
            down = _scalar(fn, arrays, probe, dtype)
            a.flat[j] = orig
            # the step actually taken after rounding to dtype
            h = float(dtype(orig + eps)) - float(dtype(orig - eps))
            numeric.flat[j] = (up - down) / h
        tape_parts.append(analytic.ravel())
        fd_parts.append(numeric.ravel())
    analytic, numeric = np.concatenate(tape_parts), np.concatenate(fd_parts)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return float(np.linalg.norm(analytic - numeric) / scale) if scale > 0 else 0.0


def run(dtype=np.float32, shapes: int = 20, seed: int = 0, ops=None) -> list[OpResult]:
    dtype = np.dtype(dtype).type
    results = []
    for name, make in CASES.items():
        if ops and name not in ops:
            continue
        rng = np.random.default_rng([seed, len(results)])
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(shapes):
            inputs, fn = make(rng)
            worst = max(worst, check_once(fn, inputs, dtype, rng))
        results.append(OpResult(name, shapes, worst, time.perf_counter() - t0))
    return results
