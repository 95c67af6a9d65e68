"""Tape-based reverse-mode autodiff over (batch, channel, time) arrays.

Only the operations the Text2Mel / SSRN networks need are provided. Ops record
themselves on the active :class:`Tape` (if any) when at least one input
requires a gradient; outside a tape everything runs forward-only.

    with Tape() as tape:
        y = conv1d(x, w, b, ConvSpec(...))
        loss = mean(y)
    tape.backward(loss)      # fills Parameter.grad
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels

DEFAULT_DTYPE = np.float32

_state = threading.local()


class AutodiffError(ValueError):
    pass


class Tensor:
    """Immutable array value. ``data`` must not be modified after creation."""

    __slots__ = ("data", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """Trainable tensor with gradient and ADAM moment buffers.

    ``data`` is replaced (never mutated) by :func:`adam_step`, so tensors
    handed out by earlier forward passes stay valid.
    """

    __slots__ = ("name", "grad", "adam_m", "adam_v", "step")

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step = 0

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: Callable


class Tape:
    """Ordered record of executed ops; consumed by a single :meth:`backward`."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._grads: dict[int, np.ndarray] = {}
        self._prev = None

    def __enter__(self):
        self._prev = getattr(_state, "tape", None)
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        self._prev = None
        return False

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        if self.consumed:
            raise AutodiffError("tape already consumed")
        self.nodes.append(_Node(out, tuple(inputs), backward))

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Propagate d(loss) through the tape.

        Returns ``{parameter name: gradient}`` and writes each gradient into
        the matching ``Parameter.grad``. Gradients of other leaves that
        require grad are available through :meth:`grad`.
        """
        if self.consumed:
            raise AutodiffError("tape already consumed")
        if loss.data.size != 1:
            raise AutodiffError(f"loss must be scalar, got shape {loss.shape}")
        self.consumed = True
        grads = self._grads
        grads[id(loss)] = np.ones_like(loss.data)
        params: dict[int, Parameter] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if isinstance(t, Parameter):
                    params[key] = t
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        out = {}
        for key, p in params.items():
            p.grad = grads[key].astype(p.data.dtype, copy=False).reshape(p.data.shape)
            out[p.name] = p.grad
        self.nodes = []
        return out

    def grad(self, t: Tensor):
        """Gradient accumulated for a leaf tensor after :meth:`backward`."""
        return self._grads.get(id(t))


def active_tape():
    return getattr(_state, "tape", None)


def _make(data, inputs, backward) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(out, inputs, backward)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


# --- convolution -----------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 1
    dilation: int = 1
    causal: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.dilation < 1:
            raise AutodiffError(f"kernel and dilation must be >= 1: {self}")
        if not self.causal and ((self.kernel - 1) * self.dilation) % 2:
            raise AutodiffError(f"non-causal conv needs even total padding: {self}")

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels, self.kernel)

    @property
    def pad_left(self) -> int:
        total = (self.kernel - 1) * self.dilation
        return total if self.causal else total // 2


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Stride-1 1D convolution with zero padding that keeps the length.

    Causal mode pads ``(k-1)*dilation`` on the left only, so ``out[t]`` sees
    ``x[<= t]``; non-causal mode splits that padding evenly.
    """
    if x.data.ndim != 3 or x.shape[1] != spec.in_channels:
        raise AutodiffError(f"conv1d expects {spec.in_channels} input channels, got shape {x.shape}")
    if weight.shape != spec.weight_shape:
        raise AutodiffError(f"weight shape {weight.shape} != {spec.weight_shape}")
    xd, wd = x.data, weight.data
    out = kernels.conv1d_forward(xd, wd, bias.data, spec.dilation, spec.pad_left)

    def backward(g):
        gx, gw, gb = kernels.conv1d_backward(g, xd, wd, spec.dilation, spec.pad_left)
        return gx, gw, gb

    return _make(out, (x, weight, bias), backward)


def deconv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Transposed convolution, kernel 2, stride 2: length doubles exactly.

    ``out[:, :, 2t + j] = weight[:, :, j] @ x[:, :, t] + bias``.
    """
    O, I, K = weight.shape
    if K != 2:
        raise AutodiffError("deconv1d supports kernel 2 / stride 2 only")
    if x.data.ndim != 3 or x.shape[1] != I:
        raise AutodiffError(f"deconv1d expects {I} input channels, got shape {x.shape}")
    xd, wd = x.data, weight.data
    B, _, T = xd.shape
    out = np.empty((B, O, 2 * T), dtype=xd.dtype)
    for j in range(2):
        out[:, :, j::2] = np.matmul(wd[:, :, j], xd)
    out += bias.data[None, :, None]

    def backward(g):
        gx = np.zeros_like(xd)
        gw = np.empty_like(wd)
        for j in range(2):
            gj = np.ascontiguousarray(g[:, :, j::2])
            gx += np.matmul(wd[:, :, j].T, gj)
            gw[:, :, j] = np.tensordot(gj, xd, axes=([0, 2], [0, 2]))
        return gx, gw, g.sum(axis=(0, 2))

    return _make(out, (x, weight, bias), backward)


def highway(x: Tensor, h: Tensor) -> Tensor:
    """Gated residual: sigmoid(H1) * H2 + (1 - sigmoid(H1)) * x, with [H1; H2] = h."""
    C = x.shape[1]
    if h.shape[1] != 2 * C or h.shape[0] != x.shape[0] or h.shape[2] != x.shape[2]:
        raise AutodiffError(f"highway needs h with 2x{C} channels, got {h.shape}")
    xd, hd = x.data, h.data
    out, gate = kernels.highway_forward(xd, hd)

    def backward(g):
        return kernels.highway_backward(g, xd, hd, gate)

    return _make(out, (x, h), backward)


# --- elementwise and structural ops ---------------------------------------


def relu(x: Tensor) -> Tensor:
    xd = x.data
    out = np.maximum(xd, 0)

    def backward(g):
        return (g * (xd > 0),)

    return _make(out, (x,), backward)


def _stable_sigmoid(z):
    # exp of a non-positive argument only
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(z.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)

    def backward(g):
        return (g * out * (1 - out),)

    return _make(out, (x,), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    out = x.data * x.data.dtype.type(factor)

    def backward(g):
        return (g * x.data.dtype.type(factor),)

    return _make(out, (x,), backward)


def add(*terms: Tensor) -> Tensor:
    out = terms[0].data.copy()
    for t in terms[1:]:
        out = out + t.data

    def backward(g):
        return tuple(g for _ in terms)

    return _make(out, terms, backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise AutodiffError(f"cannot concat {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        return g[:, :ca], g[:, ca:]

    return _make(out, (a, b), backward)


def split_channels(x: Tensor, at: int) -> tuple[Tensor, Tensor]:
    """Split along the channel axis into ``[:at]`` and ``[at:]``."""
    xd = x.data

    def piece(lo, hi):
        def backward(g):
            full = np.zeros_like(xd)
            full[:, lo:hi] = g
            return (full,)

        return _make(np.ascontiguousarray(xd[:, lo:hi]), (x,), backward)

    return piece(0, at), piece(at, xd.shape[1])


def bmm(a: Tensor, b: Tensor, transpose_a: bool = False) -> Tensor:
    """Batched matrix product over the last two axes; optional a-transpose."""
    ad, bd = a.data, b.data
    lhs = ad.transpose(0, 2, 1) if transpose_a else ad
    if lhs.shape[2] != bd.shape[1] or lhs.shape[0] != bd.shape[0]:
        raise AutodiffError(f"bmm shape mismatch {lhs.shape} @ {bd.shape}")
    out = np.matmul(lhs, bd)

    def backward(g):
        gb = np.matmul(lhs.transpose(0, 2, 1), g)
        if transpose_a:
            ga = np.matmul(bd, g.transpose(0, 2, 1))
        else:
            ga = np.matmul(g, bd.transpose(0, 2, 1))
        return ga, gb

    return _make(out, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Plain 2D matrix product (for unbatched use)."""
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise AutodiffError(f"matmul shape mismatch {ad.shape} @ {bd.shape}")

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), backward)


def softmax_over_rows(x: Tensor) -> Tensor:
    """Softmax along axis 1 (the row / character axis), per column.

    Accepts (batch, rows, cols) or (rows, cols).
    """
    xd = x.data
    axis = 1 if xd.ndim == 3 else 0
    z = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def embed(indices, table: Tensor) -> Tensor:
    """Look up columns of an (e, vocab) table: (B, N) ints -> (B, e, N)."""
    idx = np.asarray(indices)
    vocab = table.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise AutodiffError(f"embedding index out of range [0, {vocab})")
    td = table.data
    out = np.ascontiguousarray(td[:, idx].transpose(1, 0, 2))

    def backward(g):
        gt = np.zeros_like(td)
        # g: (B, e, N) -> scatter-add columns
        flat = g.transpose(1, 0, 2).reshape(td.shape[0], -1)
        np.add.at(gt.T, idx.reshape(-1), flat.T)
        return (gt,)

    return _make(out, (table,), backward)


def mean(x: Tensor) -> Tensor:
    xd = x.data
    n = xd.size
    out = np.asarray(xd.sum(dtype=np.float64) / n, dtype=xd.dtype)

    def backward(g):
        return (np.full_like(xd, g / n),)

    return _make(out, (x,), backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """sum(x * weights) with a constant weight array (scalar output)."""
    xd = x.data
    w = np.asarray(weights, dtype=xd.dtype)
    out = np.asarray(np.sum(xd * w, dtype=np.float64), dtype=xd.dtype)

    def backward(g):
        return (np.broadcast_to(g * w, xd.shape).astype(xd.dtype),)

    return _make(out, (x,), backward)


# --- initialization and optimization --------------------------------------


def he_init(shape, fan_in: int, rng: np.random.Generator, dtype=None) -> np.ndarray:
    """He Gaussian init: N(0, 2 / fan_in)."""
    if fan_in <= 0:
        raise AutodiffError("fan_in must be positive")
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype or DEFAULT_DTYPE)


@dataclass(frozen=True)
class AdamConfig:
    alpha: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-6


def adam_step(params, cfg: AdamConfig = AdamConfig()):
    """One bias-corrected ADAM update on every parameter, in place.

    Moments are updated in place and ``data`` is replaced by a new array.
    """
    for p in params:
        if p.grad.shape != p.data.shape:
            raise AutodiffError(f"{p.name}: gradient shape {p.grad.shape} != {p.data.shape}")
        p.step += 1
        p.data = kernels.adam_update(p.data, p.grad, p.adam_m, p.adam_v, cfg.alpha,
                                     cfg.beta1, cfg.beta2, cfg.eps, p.step)
