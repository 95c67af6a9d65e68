"""Spectrogram loss (L1 + binary divergence) and guided attention loss.

All expectations are arithmetic means over the valid (unmasked) elements.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from . import autodiff as ad
from .autodiff import Tensor

GUIDE_WIDTH = 0.2


@dataclass
class LossReport:
    l1: float
    bin_div: float
    attention: float
    total: float

    def finite(self) -> bool:
        return bool(np.isfinite([self.l1, self.bin_div, self.attention, self.total]).all())


# --- numpy reference forms -------------------------------------------------


def bin_divergence(Y, S) -> float:
    """Mean of -S log Y - (1 - S) log(1 - Y); Y must lie in (0, 1)."""
    Y = np.asarray(Y, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if Y.shape != S.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {S.shape}")
    if np.any(Y <= 0) or np.any(Y >= 1):
        raise ValueError("Y must lie strictly inside (0, 1)")
    return float(np.mean(-xlogy(S, Y) - xlogy(1 - S, 1 - Y)))


def spec_loss(Y, S) -> float:
    """D_bin(Y|S) + mean |Y - S|."""
    Y = np.asarray(Y, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    return bin_divergence(Y, S) + float(np.mean(np.abs(Y - S)))


def entropy_floor(S) -> float:
    """D_bin(S|S): the smallest value the divergence can take for target S."""
    S = np.asarray(S, dtype=np.float64)
    return float(np.mean(-xlogy(S, S) - xlogy(1 - S, 1 - S)))


def guided_weights(N: int, T: int, g: float = GUIDE_WIDTH) -> np.ndarray:
    """W[n, t] = 1 - exp(-(n/N - t/T)^2 / (2 g^2)), zero-based n and t."""
    n = np.arange(N)[:, None] / N
    t = np.arange(T)[None, :] / T
    return 1.0 - np.exp(-((n - t) ** 2) / (2 * g * g))


def guided_attention_loss(A, W) -> float:
    A = np.asarray(A, dtype=np.float64)
    if A.shape != np.shape(W):
        raise ValueError(f"A shape {A.shape} does not match W {np.shape(W)}")
    return float(np.mean(A * W))


def batch_guided_weights(text_lengths, mel_lengths, N: int, T: int, g: float = GUIDE_WIDTH):
    """Per-example W padded to (B, N, T) plus the matching validity mask."""
    B = len(text_lengths)
    W = np.zeros((B, N, T))
    mask = np.zeros((B, N, T), dtype=bool)
    for b, (n, t) in enumerate(zip(text_lengths, mel_lengths)):
        W[b, :n, :t] = guided_weights(n, t, g)
        mask[b, :n, :t] = True
    return W, mask


# --- tape ops used in training --------------------------------------------


def _count(mask, shape):
    if mask is None:
        return int(np.prod(shape))
    return int(np.broadcast_to(mask, shape).sum())


def bin_divergence_logits(logits: Tensor, S, mask=None) -> Tensor:
    """Masked mean of -S*z + log(1 + exp z), z = logit(Y).

    The gradient with respect to z is (sigmoid(z) - S) / count.
    """
    z = logits.data
    S = np.asarray(S, dtype=z.dtype)
    if S.shape != z.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {S.shape}")
    m = np.ones(z.shape, dtype=z.dtype) if mask is None else np.broadcast_to(mask, z.shape).astype(z.dtype)
    n = max(_count(mask, z.shape), 1)
    softplus = np.logaddexp(0, z)
    val = np.sum((softplus - S * z) * m, dtype=np.float64) / n

    def backward(g):
        return (g * (ad._stable_sigmoid(z) - S) * m / z.dtype.type(n),)

    return ad._make(np.asarray(val, dtype=z.dtype), (logits,), backward)


def l1_loss(Y: Tensor, S, mask=None) -> Tensor:
    y = Y.data
    S = np.asarray(S, dtype=y.dtype)
    if S.shape != y.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {S.shape}")
    m = np.ones(y.shape, dtype=y.dtype) if mask is None else np.broadcast_to(mask, y.shape).astype(y.dtype)
    n = max(_count(mask, y.shape), 1)
    diff = y - S
    val = np.sum(np.abs(diff) * m, dtype=np.float64) / n

    def backward(g):
        return (g * np.sign(diff) * m / y.dtype.type(n),)

    return ad._make(np.asarray(val, dtype=y.dtype), (Y,), backward)


def attention_loss(A: Tensor, W, mask=None) -> Tensor:
    """Masked mean of A * W over the valid (n, t) cells."""
    a = A.data
    if np.shape(W) != a.shape:
        raise ValueError(f"A shape {a.shape} does not match W {np.shape(W)}")
    n = max(_count(mask, a.shape), 1)
    weights = np.asarray(W, dtype=a.dtype)
    if mask is not None:
        weights = weights * mask
    return ad.scale(ad.weighted_sum(A, weights), 1.0 / n)


def time_mask(lengths, T: int) -> np.ndarray:
    """(B, 1, T) boolean validity mask."""
    return (np.arange(T)[None, :] < np.asarray(lengths)[:, None])[:, None, :]
