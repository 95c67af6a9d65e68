"""Waveform <-> spectrogram conversions and phase reconstruction.

Fixed analysis settings: 22050 Hz, periodic Hann window of 1024, hop 256,
513 frequency bins, 80 mel bands, frame decimation by 4.
"""
from __future__ import annotations

import wave
from functools import lru_cache

import numpy as np

SAMPLE_RATE = 22050
N_FFT = 1024
HOP = 256
N_BINS = N_FFT // 2 + 1
N_MELS = 80
DECIMATION = 4
GAMMA = 0.6
ETA = 1.3


class DSPError(ValueError):
    pass


@lru_cache(maxsize=None)
def hann_window(n: int = N_FFT) -> np.ndarray:
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2 * np.pi * k / n)


def _frame_count(n_samples: int) -> int:
    return (n_samples - N_FFT) // HOP + 1


def frames_for_samples(n_samples: int) -> int:
    """Frame count of :func:`stft` for a waveform of ``n_samples``."""
    return _frame_count(n_samples + N_FFT)


def stft_frames(x: np.ndarray) -> np.ndarray:
    """STFT of an already padded signal, no extra padding: (513, T')."""
    n = _frame_count(len(x))
    if n < 1:
        raise DSPError(f"signal of {len(x)} samples is too short for one window")
    idx = np.arange(N_FFT)[None, :] + HOP * np.arange(n)[:, None]
    frames = x[idx] * hann_window()
    return np.fft.rfft(frames, axis=1).T


def stft(w: np.ndarray) -> np.ndarray:
    """Complex spectrogram (513, T') with 512-sample reflection padding each side."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise DSPError("waveform must be a non-empty 1D array")
    pad = N_FFT // 2
    if w.size <= pad:
        raise DSPError(f"waveform of {w.size} samples is too short for one window")
    return stft_frames(np.pad(w, pad, mode="reflect"))


def _ola(Z: np.ndarray):
    """Windowed overlap-add of inverse frames and the summed squared window."""
    if Z.ndim != 2 or Z.shape[0] != N_BINS:
        raise DSPError(f"spectrogram must have shape ({N_BINS}, T'), got {Z.shape}")
    n = Z.shape[1]
    length = N_FFT + HOP * (n - 1)
    win = hann_window()
    frames = np.fft.irfft(Z.T, n=N_FFT, axis=1) * win
    num = np.zeros(length)
    den = np.zeros(length)
    for m in range(n):
        s = m * HOP
        num[s:s + N_FFT] += frames[m]
        den[s:s + N_FFT] += win * win
    return num, den


def istft_frames(Z: np.ndarray) -> np.ndarray:
    """Least-squares inverse of :func:`stft_frames` (full padded length)."""
    num, den = _ola(Z)
    out = np.zeros_like(num)
    ok = den > 1e-10
    out[ok] = num[ok] / den[ok]
    return out


def _fold(v: np.ndarray, length: int) -> np.ndarray:
    """Adjoint of reflection padding: add mirrored edge samples back in."""
    pad = N_FFT // 2
    out = v[pad:pad + length].copy()
    out[1:pad + 1] += v[:pad][::-1]
    out[length - 1 - pad:length - 1] += v[pad + length:pad + length + pad][::-1]
    return out


def istft(Z: np.ndarray, length: int | None = None) -> np.ndarray:
    """Least-squares inverse of :func:`stft` for a signal of ``length`` samples.

    Reflection padding maps every padded sample onto one original sample, so
    the normal equations stay diagonal: fold the overlap-add numerator and
    the summed squared window, then divide.
    """
    num, den = _ola(Z)
    if length is None:
        length = HOP * (Z.shape[1] - 1)
    if length <= N_FFT // 2:
        raise DSPError(f"length {length} is too short for reflection padding")
    full = length + N_FFT
    n2, d2 = np.zeros(full), np.zeros(full)
    k = min(full, len(num))
    n2[:k], d2[:k] = num[:k], den[:k]
    num, den = _fold(n2, length), _fold(d2, length)
    out = np.zeros(length)
    ok = den > 1e-10
    out[ok] = num[ok] / den[ok]
    return out


def normalize_mag(mag: np.ndarray, gamma: float = GAMMA) -> np.ndarray:
    """(|Z| / max|Z|) ** gamma; an all-zero input stays all-zero."""
    mag = np.asarray(mag, dtype=np.float64)
    peak = mag.max() if mag.size else 0.0
    if peak <= 0:
        return np.zeros_like(mag)
    return (mag / peak) ** gamma


def denormalize_mag(mag: np.ndarray, gamma: float = GAMMA, eta: float = ETA) -> np.ndarray:
    return np.clip(np.asarray(mag, dtype=np.float64), 0, None) ** (eta / gamma)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(n_mels: int = N_MELS, sr: int = SAMPLE_RATE, n_fft: int = N_FFT) -> np.ndarray:
    """Triangular filters equally spaced on the mel scale over 0..sr/2, peak 1."""
    n_bins = n_fft // 2 + 1
    freqs = np.linspace(0, sr / 2, n_bins)
    edges = mel_to_hz(np.linspace(0, hz_to_mel(sr / 2), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[m] = np.clip(np.minimum(up, down), 0, None)
        peak = fb[m].max()
        if peak > 0:
            fb[m] /= peak
    fb.setflags(write=False)
    return fb


def mel_linear(lin: np.ndarray) -> np.ndarray:
    """Filterbank projection only (linear in its input)."""
    return mel_filterbank() @ lin


def decimate(x: np.ndarray, factor: int = DECIMATION) -> np.ndarray:
    """Keep frames 0, factor, 2*factor, ...: ceil(T'/factor) frames."""
    return x[:, ::factor]


def mel_project(lin_normalized: np.ndarray, gamma: float = GAMMA) -> np.ndarray:
    """Mel targets: filterbank, decimate by 4, renormalize (S / max S) ** gamma.

    Decimating first keeps the maximum of the kept frames at exactly 1.
    """
    return normalize_mag(decimate(mel_linear(lin_normalized)), gamma)


def spectral_convergence(w: np.ndarray, target_mag: np.ndarray) -> float:
    """||  |STFT(w)| - target || / || target ||."""
    Z = stft(w)
    n = min(Z.shape[1], target_mag.shape[1])
    denom = np.linalg.norm(target_mag[:, :n])
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(np.abs(Z[:, :n]) - target_mag[:, :n]) / denom)


def locked_phase(mag: np.ndarray) -> np.ndarray:
    """Phase-vocoder initial phases with identity phase locking.

    Each bin follows its nearest spectral peak. A peak at fractional bin f
    (parabolic fit on log magnitude) advances by 2 pi f HOP / N_FFT per
    frame; bins around it alternate by pi, the sign pattern of the Hann main
    lobe. Frame m uses only frames <= m.
    """
    F, T = mag.shape
    logm = np.log(mag + 1e-12)
    ph = np.zeros((F, T))
    k = np.arange(F)
    for m in range(T):
        a = mag[:, m]
        peaks = np.flatnonzero((a[1:-1] >= a[:-2]) & (a[1:-1] > a[2:])) + 1
        if peaks.size == 0:
            ph[:, m] = ph[:, m - 1] if m else 0.0
            continue
        lm = logm[:, m]
        lo, mid, hi = lm[peaks - 1], lm[peaks], lm[peaks + 1]
        curv = lo - 2 * mid + hi
        safe = np.where(np.abs(curv) > 1e-12, curv, 1.0)
        freq = peaks + np.where(np.abs(curv) > 1e-12, 0.5 * (lo - hi) / safe, 0.0)
        owner = np.searchsorted((peaks[:-1] + peaks[1:]) / 2, k)
        p = peaks[owner]
        prev = ph[p, m - 1] if m else np.zeros(F)
        ph[:, m] = prev + 2 * np.pi * freq[owner] * HOP / N_FFT - np.pi * (k - p)
    return ph


def griffin_lim(mag: np.ndarray, iterations: int = 50, rng=None, history: list | None = None,
                length: int | None = None) -> np.ndarray:
    """Offline Griffin-Lim from magnitudes of :func:`stft` layout.

    Each step is an exact least-squares projection onto spectrograms of
    reflection-padded signals, so the spectral convergence of the returned
    waveform never increases. Starts from :func:`locked_phase`, or from
    uniform random phase when ``rng`` is given. If ``history`` is a list,
    the spectral convergence before each projection and after the last is
    appended.
    """
    if iterations < 1:
        raise DSPError("iterations must be positive")
    mag = np.asarray(mag, dtype=np.float64)
    if length is None:
        length = HOP * (mag.shape[1] - 1)
    if not mag.any():
        return np.zeros(length)
    if rng is None:
        phase = locked_phase(mag)
    else:
        phase = 2 * np.pi * rng.random(mag.shape)
    norm = np.linalg.norm(mag)
    y = istft(mag * np.exp(1j * phase), length)
    for _ in range(iterations):
        Z = stft(y)
        if history is not None:
            history.append(float(np.linalg.norm(np.abs(Z) - mag) / norm))
        y = istft(mag * np.exp(1j * np.angle(Z)), length)
    if history is not None:
        history.append(float(np.linalg.norm(np.abs(stft(y)) - mag) / norm))
    return y


def _ola_blocks(fw: np.ndarray) -> np.ndarray:
    """Overlap-add rows of ``fw`` spaced HOP apart (HOP divides N_FFT)."""
    k = fw.shape[0]
    q = N_FFT // HOP
    out = np.zeros((k + q - 1, HOP))
    blocks = fw.reshape(k, q, HOP)
    for i in range(q):
        out[i:i + k] += blocks[:, i]
    return out.reshape(-1)


def rtisi_la(mag: np.ndarray, window_count: int = 100, iterations: int = 10,
             length: int | None = None) -> np.ndarray:
    """Online Griffin-Lim with look-ahead.

    Frames are committed left to right. Before committing frame ``m`` the
    buffer ``m .. m + window_count - 1`` is refined with ``iterations`` rounds
    of magnitude projection against the partial reconstruction built from the
    committed frames plus the current buffer estimates. Each frame entering
    the buffer takes its initial phase from that partial reconstruction.
    """
    if window_count < 1 or iterations < 1:
        raise DSPError("window_count and iterations must be positive")
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[0] != N_BINS:
        raise DSPError(f"magnitudes must have shape ({N_BINS}, T'), got {mag.shape}")
    n = mag.shape[1]
    total = N_FFT + HOP * (n - 1)
    pad = N_FFT // 2
    out_len = length if length is not None else HOP * (n - 1)
    if not mag.any():
        return np.zeros(out_len)
    win = hann_window()
    win2 = win * win
    init_phase = locked_phase(mag)
    # committed numerator / denominator of the weighted overlap-add
    c_num = np.zeros(total)
    c_den = np.zeros(total)
    frames = np.zeros((n, N_FFT))  # current time-domain estimates (unwindowed)
    seg_idx = np.arange(N_FFT)

    def estimate(lo, hi):
        # partial reconstruction over the span of frames lo..hi-1
        s0, s1 = lo * HOP, (hi - 1) * HOP + N_FFT
        num = c_num[s0:s1] + _ola_blocks(frames[lo:hi] * win)
        den = c_den[s0:s1] + _ola_blocks(np.broadcast_to(win2, (hi - lo, N_FFT)))
        y = np.zeros_like(num)
        ok = den > 1e-10
        y[ok] = num[ok] / den[ok]
        return y, s0

    def refresh(lo, hi):
        y, s0 = estimate(lo, hi)
        idx = (np.arange(lo, hi) * HOP - s0)[:, None] + seg_idx[None, :]
        spec = np.fft.rfft(y[idx] * win, axis=1)
        proj = mag[:, lo:hi].T * np.exp(1j * np.angle(spec))
        frames[lo:hi] = np.fft.irfft(proj, n=N_FFT, axis=1)

    filled = 0
    for m in range(n):
        hi = min(n, m + window_count)
        while filled < hi:
            frames[filled] = np.fft.irfft(mag[:, filled] * np.exp(1j * init_phase[:, filled]), n=N_FFT)
            filled += 1
        for _ in range(iterations):
            refresh(m, hi)
        s = m * HOP
        c_num[s:s + N_FFT] += frames[m] * win
        c_den[s:s + N_FFT] += win2
    # final least-squares solve respecting the reflection padding
    if out_len <= pad:
        raise DSPError(f"length {out_len} is too short for reflection padding")
    full = out_len + N_FFT
    n2, d2 = np.zeros(full), np.zeros(full)
    k = min(full, total)
    n2[:k], d2[:k] = c_num[:k], c_den[:k]
    num, den = _fold(n2, out_len), _fold(d2, out_len)
    y = np.zeros(out_len)
    ok = den > 1e-10
    y[ok] = num[ok] / den[ok]
    return y


# --- WAV I/O (16-bit PCM mono) --------------------------------------------


def read_wav(path) -> tuple[np.ndarray, int]:
    try:
        with wave.open(str(path), "rb") as f:
            if f.getsampwidth() != 2:
                raise DSPError(f"{path}: only 16-bit PCM is supported")
            if f.getnchannels() != 1:
                raise DSPError(f"{path}: only mono is supported")
            sr = f.getframerate()
            raw = f.readframes(f.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DSPError(f"{path}: corrupted WAV ({exc})") from exc
    x = np.frombuffer(raw, dtype="<i2").astype(np.float32) / np.float32(32767.0)
    return x, sr


def write_wav(path, samples: np.ndarray, sr: int = SAMPLE_RATE):
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sr)
        f.writeframes(pcm.tobytes())
