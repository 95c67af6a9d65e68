"""Numpy reference implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Arrays are (batch, channels, time), C-contiguous, float32 or float64.
Weights are (out_channels, in_channels, kernel).
"""
import numpy as np


def _tap_range(T, shift):
    # Output columns t whose input column t + shift lies inside [0, T).
    t0 = max(0, -shift)
    t1 = min(T, T - shift)
    return t0, t1


def conv1d_forward(x, w, b, dilation, pad_left):
    B, _, T = x.shape
    O, _, K = w.shape
    out = np.empty((B, O, T), dtype=x.dtype)
    out[:] = b[None, :, None]
    for j in range(K):
        shift = j * dilation - pad_left
        t0, t1 = _tap_range(T, shift)
        if t1 <= t0:
            continue
        # contiguous copies keep np.matmul on its BLAS path
        xs = np.ascontiguousarray(x[:, :, t0 + shift:t1 + shift])
        out[:, :, t0:t1] += np.matmul(np.ascontiguousarray(w[:, :, j]), xs)
    return out


def conv1d_backward(gout, x, w, dilation, pad_left):
    B, _, T = x.shape
    O, I, K = w.shape
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for j in range(K):
        shift = j * dilation - pad_left
        t0, t1 = _tap_range(T, shift)
        if t1 <= t0:
            continue
        g = np.ascontiguousarray(gout[:, :, t0:t1])
        xs = x[:, :, t0 + shift:t1 + shift]
        gx[:, :, t0 + shift:t1 + shift] += np.matmul(np.ascontiguousarray(w[:, :, j].T), g)
        gw[:, :, j] = np.tensordot(g, xs, axes=([0, 2], [0, 2]))
    gb = gout.sum(axis=(0, 2))
    return gx, gw, gb


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def highway_forward(x, h):
    C = x.shape[1]
    gate = _sigmoid(h[:, :C])
    out = gate * h[:, C:] + (1 - gate) * x
    return out, gate


def highway_backward(gout, x, h, gate):
    C = x.shape[1]
    h2 = h[:, C:]
    gh = np.empty_like(h)
    gh[:, :C] = gout * (h2 - x) * gate * (1 - gate)
    gh[:, C:] = gout * gate
    gx = gout * (1 - gate)
    return gx, gh


def adam_update(value, grad, m, v, lr, beta1, beta2, eps, step):
    dt = value.dtype.type
    m *= dt(beta1)
    m += dt(1 - beta1) * grad
    v *= dt(beta2)
    v += dt(1 - beta2) * grad * grad
    m_hat = m / dt(1 - beta1 ** step)
    v_hat = v / dt(1 - beta2 ** step)
    return value - dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))
