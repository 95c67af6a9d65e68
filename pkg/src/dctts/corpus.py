"""LJSpeech-format corpus loading, the feature cache, and a synthetic toy corpus."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, dsp, text
from .training import Example

log = logging.getLogger(__name__)

INDEX_NAME = "index.txt"
CACHE_ENV = "DCTTS_CACHE_DIR"


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    id: str
    raw: str
    normalized: str
    audio_path: Path


def load_corpus(metadata_path, wav_dir=None) -> list[Record]:
    """Parse ``id|raw|normalized`` lines; ``wav_dir`` defaults to ``<metadata dir>/wavs``.

    A 2-field line uses its second field as both transcripts. The normalized
    transcript is passed through :func:`text.normalize_text`.
    """
    metadata_path = Path(metadata_path)
    wav_dir = Path(wav_dir) if wav_dir is not None else metadata_path.parent / "wavs"
    try:
        lines = metadata_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"{metadata_path}: {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{metadata_path}: not UTF-8") from exc
    records, seen = [], set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        fields = line.split("|")
        if len(fields) == 2:
            fields.append(fields[1])
        if len(fields) != 3 or not fields[0].strip():
            raise CorpusError(f"{metadata_path}:{lineno}: expected 'id|raw|normalized', got {line!r}")
        clip_id = fields[0].strip()
        if clip_id in seen:
            raise CorpusError(f"{metadata_path}:{lineno}: duplicate id {clip_id}")
        seen.add(clip_id)
        path = wav_dir / f"{clip_id}.wav"
        if not path.is_file():
            raise CorpusError(f"{metadata_path}:{lineno}: missing audio {path}")
        records.append(Record(clip_id, fields[1], text.normalize_text(fields[2]), path))
    if not records:
        log.warning("%s: empty corpus", metadata_path)
    return records


def features(wav: np.ndarray):
    """(mel (80, T), linear (513, 4T)) targets for one waveform.

    The linear spectrogram is zero-padded from T' to 4T frames so every mel
    frame owns exactly four linear frames.
    """
    lin = dsp.normalize_mag(np.abs(dsp.stft(wav)))
    mel = dsp.mel_project(lin)
    padded = np.zeros((lin.shape[0], 4 * mel.shape[1]))
    padded[:, :lin.shape[1]] = lin
    return mel.astype(np.float32), padded.astype(np.float32)


def cache_dir(default) -> Path:
    return Path(os.environ.get(CACHE_ENV) or default)


def _preprocess_one(rec: Record, out_dir: Path) -> str:
    wav, sr = dsp.read_wav(rec.audio_path)
    if sr != dsp.SAMPLE_RATE:
        raise CorpusError(f"{rec.audio_path}: sample rate {sr} Hz, expected {dsp.SAMPLE_RATE} (resampling is not supported)")
    if wav.size < dsp.N_FFT:
        raise CorpusError(f"{rec.audio_path}: {wav.size} samples is too short for one window")
    ids = text.encode(rec.normalized)
    if ids.size == 0:
        raise CorpusError(f"{rec.id}: transcript is empty after normalization")
    mel, lin = features(wav)
    checkpoint.save_tensors(out_dir / f"{rec.id}.dcts", {
        "text": ids.astype(np.float32),
        "mel": mel,
        "linear": lin,
    })
    return rec.id


def preprocess(records, out_dir, workers: int = 1) -> Path:
    """Write one tensor file per clip plus ``index.txt``; returns the cache dir.

    Output is deterministic, so re-running yields byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            ids = list(pool.map(_preprocess_one, records, [out_dir] * len(records)))
    else:
        ids = [_preprocess_one(r, out_dir) for r in records]
    (out_dir / INDEX_NAME).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
    return out_dir


def load_cache(cache, ids=None) -> list[Example]:
    """Examples listed in ``index.txt`` (or the given ``ids``)."""
    cache = Path(cache)
    if ids is None:
        index = cache / INDEX_NAME
        if not index.is_file():
            raise CorpusError(f"{cache}: no {INDEX_NAME}; run preprocess first")
        ids = [line.strip() for line in index.read_text(encoding="utf-8").splitlines() if line.strip()]
    out = []
    for clip_id in ids:
        path = cache / f"{clip_id}.dcts"
        if not path.is_file():
            raise CorpusError(f"{path}: not in cache")
        t = checkpoint.load_tensors(path)
        out.append(Example(clip_id, t["text"].astype(np.int64), t["mel"], t["linear"]))
    return out


# --- synthetic corpus -----------------------------------------------------

TOY_LETTERS = "abdeikmnorstu"
SAMPLES_PER_CHAR = 2048  # two mel frames


def char_tone(ch: str, n: int = SAMPLES_PER_CHAR, sr: int = dsp.SAMPLE_RATE) -> np.ndarray:
    """A tapered sine whose pitch identifies the letter; silence otherwise."""
    if not ch.isalpha():
        return np.zeros(n)
    freq = 220.0 * 2 ** ((ord(ch) - ord("a")) / 6)
    t = np.arange(n) / sr
    return 0.5 * np.sin(2 * np.pi * freq * t) * np.hanning(n)


def toy_transcript(rng: np.random.Generator, words=(2, 3), word_len=(2, 4)) -> str:
    n = int(rng.integers(words[0], words[1] + 1))
    out = []
    for _ in range(n):
        k = int(rng.integers(word_len[0], word_len[1] + 1))
        out.append("".join(rng.choice(list(TOY_LETTERS), size=k)))
    return " ".join(out) + "."


def render(transcript: str) -> np.ndarray:
    return np.concatenate([char_tone(ch) for ch in transcript])


def make_toy_corpus(root, n_clips: int = 50, seed: int = 0) -> Path:
    """Write ``metadata.csv`` and ``wavs/`` for a tone-per-letter corpus."""
    root = Path(root)
    (root / "wavs").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    width = max(4, math.ceil(math.log10(n_clips + 1)))
    lines = []
    for i in range(n_clips):
        clip_id = f"TOY-{i:0{width}d}"
        script = toy_transcript(rng)
        dsp.write_wav(root / "wavs" / f"{clip_id}.wav", render(script))
        lines.append(f"{clip_id}|{script.capitalize()}|{script}\n")
    (root / "metadata.csv").write_text("".join(lines), encoding="utf-8")
    return root / "metadata.csv"
