"""Autoregressive mel synthesis and waveform generation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dsp
from .autodiff import Tensor, _stable_sigmoid
from .networks import SSRN, CausalStream, Text2Mel

MAX_BACKSTEP = -1
MAX_FORWARD_STEP = 3


@dataclass
class SynthesisConfig:
    max_T: int = 200
    use_incremental_attention: bool = True
    stop_energy_threshold: float = 0.02
    stop_lookback: int = 10
    cached: bool = False

    def __post_init__(self):
        if self.max_T < 1:
            raise ValueError("max_T must be >= 1")


@dataclass
class SynthesisResult:
    mel: np.ndarray          # (F, T_out)
    attention: np.ndarray    # (N, T_out), after any constraint
    positions: np.ndarray    # attended character index per frame


def incremental_constraint(column: np.ndarray, n_prev: int):
    """Force the attended position to move by -1..+3 characters per frame.

    Returns ``(column, n_t)``. Out-of-range moves are replaced by a one-hot
    column at ``n_prev + 1`` (clamped to the last character).
    """
    n_t = int(np.argmax(column))
    if MAX_BACKSTEP <= n_t - n_prev <= MAX_FORWARD_STEP:
        return column, n_t
    n_t = min(n_prev + 1, len(column) - 1)
    forced = np.zeros_like(column)
    forced[n_t] = 1
    return forced, n_t


def constrain_sequence(A: np.ndarray, n0: int = 0):
    """Apply :func:`incremental_constraint` column by column to an (N, T) matrix."""
    out = np.array(A, copy=True)
    pos = []
    n_prev = n0
    for t in range(out.shape[1]):
        out[:, t], n_prev = incremental_constraint(out[:, t], n_prev)
        pos.append(n_prev)
    return out, np.asarray(pos)


def _should_stop(frames, t, n_t, N, cfg):
    # t: index of the newest generated frame
    if n_t < N - 1 or t + 1 < cfg.stop_lookback:
        return False
    tail = frames[:, t - cfg.stop_lookback + 1:t + 1]
    return bool(np.all(tail.mean(axis=0) < cfg.stop_energy_threshold))


def _attend_column(K, V, q, d):
    scores = K.T @ q / math.sqrt(d)
    scores = scores - scores.max()
    e = np.exp(scores)
    return e / e.sum()


def synthesize_mel(model: Text2Mel, text_ids, config: SynthesisConfig = SynthesisConfig()) -> SynthesisResult:
    """Generate mel frames one at a time, feeding each back as decoder input."""
    ids = np.asarray(text_ids, dtype=np.int64).reshape(1, -1)
    N = ids.shape[1]
    if N == 0:
        raise ValueError("empty text")
    for p in model.params.values():
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError(f"parameter {p.name} is not finite")
    K_t, V_t = model.text_enc(ids)
    K, V = K_t.data[0], V_t.data[0]
    d = K.shape[0]
    F = model.hp.n_mels
    # column 0 is the zero seed frame; generated frame t lives in column t + 1
    frames = np.zeros((F, config.max_T + 1), dtype=model.dtype)
    A = np.zeros((N, config.max_T), dtype=model.dtype)
    positions = []
    n_prev = 0
    if config.cached:
        enc = CausalStream(model.params, "audio_enc", model.enc_layers)
        dec = CausalStream(model.params, "audio_dec", model.dec_layers)
    T_out = config.max_T
    for t in range(config.max_T):
        if config.cached:
            q = enc.step(frames[None, :, t:t + 1])[0]
            col = _attend_column(K, V, q, d)[:, 0]
        else:
            Q = model.audio_enc(frames[None, :, :t + 1]).data
            q_all = Q[0]
            col = _attend_column(K, V, q_all[:, t:t + 1], d)[:, 0]
        if config.use_incremental_attention:
            col, n_t = incremental_constraint(col, n_prev)
        else:
            n_t = int(np.argmax(col))
        A[:, t] = col
        if config.cached:
            r = V @ col[:, None]
            rq = np.concatenate([r, q], axis=0)[None].astype(model.dtype)
            y = _stable_sigmoid(dec.step(rq))[0, :, 0]
        else:
            R = V @ A[:, :t + 1]
            Rp = np.concatenate([R, q_all], axis=0)[None].astype(model.dtype)
            y = _stable_sigmoid(model.audio_dec_logits(Tensor(Rp)).data)[0, :, t]
        frames[:, t + 1] = y
        positions.append(n_t)
        n_prev = n_t
        if _should_stop(frames[:, 1:], t, n_t, N, config):
            T_out = t + 1
            break
    return SynthesisResult(frames[:, 1:T_out + 1].copy(), A[:, :T_out].copy(), np.asarray(positions))


def synthesize_waveform(Y: np.ndarray, ssrn: SSRN, gamma: float = dsp.GAMMA, eta: float = dsp.ETA,
                        window_count: int = 100, iterations: int = 10, peak: float = 0.95,
                        silence_floor: float = 1e-3) -> np.ndarray:
    """Mel (F, T) -> SSRN -> de-emphasis -> RTISI-LA -> peak-normalized waveform.

    Output length is 4 * T * hop samples. Peak normalization is skipped when
    the largest de-emphasized magnitude is below ``silence_floor``, so a
    silent spectrogram is not amplified into noise.
    """
    Y = np.asarray(Y, dtype=ssrn.dtype)
    _, Z = ssrn.forward(Y[None])
    mag = dsp.denormalize_mag(Z.data[0], gamma, eta)
    n_samples = mag.shape[1] * dsp.HOP
    wav = dsp.rtisi_la(mag, window_count, iterations, length=n_samples)
    top = np.abs(wav).max()
    if mag.max() >= silence_floor and top > 0:
        wav = wav * (peak / top)
    return wav.astype(np.float32)


def attention_trend(positions) -> float:
    """Spearman correlation of attended position against frame index."""
    from scipy.stats import spearmanr

    pos = np.asarray(positions)
    if len(pos) < 2 or np.all(pos == pos[0]):
        return 0.0
    return float(spearmanr(np.arange(len(pos)), pos).statistic)
