"""Text2Mel (TextEnc, AudioEnc, attention, AudioDec) and SSRN.

Each network is a flat list of layers built from a small table; parameters
live in one ordered :class:`ParamStore` per model, named
``<network>.<layer index>.<weight|bias>``.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import ConvSpec, Parameter, Tensor
from .text import VOCAB_SIZE


@dataclass(frozen=True)
class HyperParams:
    e: int = 128
    d: int = 256
    c: int = 512
    n_mels: int = 80
    n_bins: int = 513

    def as_tuple(self):
        return (self.e, self.d, self.c, self.n_mels, self.n_bins)


@dataclass(frozen=True)
class Layer:
    kind: str            # "conv" | "highway" | "deconv"
    spec: ConvSpec       # deconv: channels only, kernel fixed at 2 with stride 2
    act: str | None = None

    @property
    def weight_shape(self):
        if self.kind == "highway":
            return (2 * self.spec.in_channels, self.spec.in_channels, self.spec.kernel)
        if self.kind == "deconv":
            return (self.spec.out_channels, self.spec.in_channels, 2)
        return self.spec.weight_shape

    @property
    def out_channels(self):
        return self.spec.in_channels if self.kind == "highway" else self.spec.out_channels


def _conv(i, o, act=None, causal=False):
    return Layer("conv", ConvSpec(i, o, 1, 1, causal), act)


def _hc(ch, k, dil, causal):
    return Layer("highway", ConvSpec(ch, 2 * ch, k, dil, causal))


def text_enc_layers(hp: HyperParams) -> list[Layer]:
    d2 = 2 * hp.d
    layers = [_conv(hp.e, d2, "relu"), _conv(d2, d2)]
    for _ in range(2):
        layers += [_hc(d2, 3, dil, False) for dil in (1, 3, 9, 27)]
    layers += [_hc(d2, 3, 1, False) for _ in range(2)]
    layers += [_hc(d2, 1, 1, False) for _ in range(2)]
    return layers


def audio_enc_layers(hp: HyperParams) -> list[Layer]:
    d = hp.d
    layers = [_conv(hp.n_mels, d, "relu", True), _conv(d, d, "relu", True), _conv(d, d, None, True)]
    for _ in range(2):
        layers += [_hc(d, 3, dil, True) for dil in (1, 3, 9, 27)]
    layers += [_hc(d, 3, 3, True) for _ in range(2)]
    return layers


def audio_dec_layers(hp: HyperParams) -> list[Layer]:
    d = hp.d
    layers = [_conv(2 * d, d, None, True)]
    layers += [_hc(d, 3, dil, True) for dil in (1, 3, 9, 27)]
    layers += [_hc(d, 3, 1, True) for _ in range(2)]
    layers += [_conv(d, d, "relu", True) for _ in range(3)]
    # final sigmoid is applied by the caller so losses can use the logits
    layers += [_conv(d, hp.n_mels, None, True)]
    return layers


def ssrn_layers(hp: HyperParams) -> list[Layer]:
    c, F, Fp = hp.c, hp.n_mels, hp.n_bins
    layers = [_conv(F, c), _hc(c, 3, 1, False), _hc(c, 3, 3, False)]
    for _ in range(2):
        layers += [Layer("deconv", ConvSpec(c, c)), _hc(c, 3, 1, False), _hc(c, 3, 3, False)]
    layers += [_conv(c, 2 * c)]
    layers += [_hc(2 * c, 3, 1, False) for _ in range(2)]
    layers += [_conv(2 * c, Fp)]
    layers += [_conv(Fp, Fp, "relu") for _ in range(2)]
    layers += [_conv(Fp, Fp)]
    return layers


class ParamStore(OrderedDict):
    """Ordered ``name -> Parameter`` mapping."""

    def count(self) -> int:
        return sum(p.data.size for p in self.values())


def _init_layers(store: ParamStore, prefix: str, layers, rng, dtype):
    for i, layer in enumerate(layers):
        o, inp, k = layer.weight_shape
        w = ad.he_init((o, inp, k), inp * k, rng, dtype)
        store[f"{prefix}.{i:02d}.weight"] = Parameter(w, f"{prefix}.{i:02d}.weight")
        store[f"{prefix}.{i:02d}.bias"] = Parameter(np.zeros(o, dtype), f"{prefix}.{i:02d}.bias")


def apply_layer(layer: Layer, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if layer.kind == "deconv":
        return ad.deconv1d(x, w, b)
    if layer.kind == "highway":
        return ad.highway(x, ad.conv1d(x, w, b, layer.spec))
    y = ad.conv1d(x, w, b, layer.spec)
    if layer.act == "relu":
        y = ad.relu(y)
    elif layer.act == "sigmoid":
        y = ad.sigmoid(y)
    return y


def run_stack(store, prefix, layers, x: Tensor, trace: list | None = None) -> Tensor:
    for i, layer in enumerate(layers):
        x = apply_layer(layer, x, store[f"{prefix}.{i:02d}.weight"], store[f"{prefix}.{i:02d}.bias"])
        if trace is not None:
            trace.append((f"{prefix}.{i:02d}", x.shape))
    return x


class Text2Mel:
    """Text + previous mel frames -> next mel frames and attention."""

    kind = "text2mel"

    def __init__(self, hp: HyperParams = HyperParams(), seed: int = 0, dtype=np.float32):
        self.hp = hp
        self.dtype = np.dtype(dtype)
        self.text_layers = text_enc_layers(hp)
        self.enc_layers = audio_enc_layers(hp)
        self.dec_layers = audio_dec_layers(hp)
        rng = np.random.default_rng(seed)
        p = ParamStore()
        # embedding treated as a 1x1 conv over one-hot input
        p["text_enc.embed"] = Parameter(
            ad.he_init((hp.e, VOCAB_SIZE), VOCAB_SIZE, rng, dtype), "text_enc.embed")
        _init_layers(p, "text_enc", self.text_layers, rng, dtype)
        _init_layers(p, "audio_enc", self.enc_layers, rng, dtype)
        _init_layers(p, "audio_dec", self.dec_layers, rng, dtype)
        self.params = p

    def text_enc(self, L, trace=None) -> tuple[Tensor, Tensor]:
        """(B, N) character ids -> K, V each (B, d, N)."""
        L = np.atleast_2d(np.asarray(L))
        if L.shape[1] == 0:
            raise ValueError("empty text")
        x = ad.embed(L, self.params["text_enc.embed"])
        x = run_stack(self.params, "text_enc", self.text_layers, x, trace)
        return ad.split_channels(x, self.hp.d)

    def audio_enc(self, S, trace=None) -> Tensor:
        """(B, F, T) mel frames -> Q (B, d, T); causal."""
        S = ad.as_tensor(S, self.dtype)
        return run_stack(self.params, "audio_enc", self.enc_layers, S, trace)

    def attend(self, K: Tensor, V: Tensor, Q: Tensor) -> tuple[Tensor, Tensor]:
        """A = softmax over characters of K^T Q / sqrt(d); R = V A."""
        if K.shape[1] != Q.shape[1] or K.shape != V.shape:
            raise ValueError(f"attention shape mismatch K{K.shape} V{V.shape} Q{Q.shape}")
        scores = ad.scale(ad.bmm(K, Q, transpose_a=True), 1.0 / math.sqrt(K.shape[1]))
        A = ad.softmax_over_rows(scores)
        return ad.bmm(V, A), A

    def audio_dec_logits(self, Rp: Tensor, trace=None) -> Tensor:
        return run_stack(self.params, "audio_dec", self.dec_layers, Rp, trace)

    def audio_dec(self, Rp: Tensor) -> Tensor:
        """(B, 2d, T) -> Y (B, F, T) in (0, 1); causal."""
        return ad.sigmoid(self.audio_dec_logits(Rp))

    def forward(self, L, S_in) -> tuple[Tensor, Tensor, Tensor]:
        """Teacher-forced pass. Returns (logits, Y, A); Y[..., t] predicts the frame after S_in[..., t]."""
        K, V = self.text_enc(L)
        Q = self.audio_enc(S_in)
        R, A = self.attend(K, V, Q)
        logits = self.audio_dec_logits(ad.concat_channels(R, Q))
        return logits, ad.sigmoid(logits), A


class SSRN:
    """Mel (B, F, T) -> linear magnitudes (B, F', 4T)."""

    kind = "ssrn"

    def __init__(self, hp: HyperParams = HyperParams(), seed: int = 0, dtype=np.float32):
        self.hp = hp
        self.dtype = np.dtype(dtype)
        self.layers = ssrn_layers(hp)
        rng = np.random.default_rng(seed)
        p = ParamStore()
        _init_layers(p, "ssrn", self.layers, rng, dtype)
        self.params = p

    def logits(self, Y, trace=None) -> Tensor:
        Y = ad.as_tensor(Y, self.dtype)
        if Y.shape[1] != self.hp.n_mels:
            raise ValueError(f"SSRN expects {self.hp.n_mels} mel channels, got {Y.shape}")
        return run_stack(self.params, "ssrn", self.layers, Y, trace)

    def forward(self, Y) -> tuple[Tensor, Tensor]:
        z = self.logits(Y)
        return z, ad.sigmoid(z)


# --- streaming (one frame at a time) evaluation of the causal stacks -------


class CausalStream:
    """Evaluate a causal layer stack one column at a time.

    Each conv layer keeps the last ``(k-1)*dilation`` input columns, so
    feeding frames one by one gives the same columns as a full pass.
    """

    def __init__(self, store, prefix, layers):
        self.store = store
        self.prefix = prefix
        self.layers = layers
        self.history = [None] * len(layers)

    def step(self, col: np.ndarray) -> np.ndarray:
        """``col``: (B, C, 1) array -> (B, C_out, 1) array."""
        x = col
        for i, layer in enumerate(self.layers):
            if not layer.spec.causal:
                raise ValueError("CausalStream needs causal layers")
            w = self.store[f"{self.prefix}.{i:02d}.weight"].data
            b = self.store[f"{self.prefix}.{i:02d}.bias"].data
            span = (layer.spec.kernel - 1) * layer.spec.dilation
            if span:
                hist = self.history[i]
                if hist is None:
                    hist = np.zeros(x.shape[:2] + (span,), dtype=x.dtype)
                window = np.concatenate([hist, x], axis=2)
                self.history[i] = window[:, :, 1:]
            else:
                window = x
            h = kernels.conv1d_forward(np.ascontiguousarray(window), w, b,
                                       layer.spec.dilation, span)[:, :, -1:]
            if layer.kind == "highway":
                x, _ = kernels.highway_forward(x, np.ascontiguousarray(h))
            elif layer.act == "relu":
                x = np.maximum(h, 0)
            else:
                x = h
        return x


def layer_table(model) -> list[tuple[str, tuple, int]]:
    """(layer name, weight shape, parameter count) for every layer, in order."""
    rows = []
    for name, p in model.params.items():
        rows.append((name, p.shape, p.data.size))
    return rows
