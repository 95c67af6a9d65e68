"""Batching, teacher-forced Text2Mel training, SSRN crop training, run loop."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .losses import (
    LossReport,
    attention_loss,
    batch_guided_weights,
    bin_divergence_logits,
    l1_loss,
    time_mask,
)
from .networks import SSRN, HyperParams, Text2Mel

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, report: LossReport):
        super().__init__(f"non-finite loss: {report}")
        self.report = report


@dataclass
class TrainConfig:
    batch_size: int = 16
    alpha: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-6
    snapshot_every: int = 5000
    ssrn_crop: int = 64
    seed: int = 0
    e: int = 128
    d: int = 256
    c: int = 512
    guided_attention: bool = True
    guide_width: float = 0.2

    @property
    def adam(self) -> ad.AdamConfig:
        return ad.AdamConfig(self.alpha, self.beta1, self.beta2, self.eps)

    @property
    def hparams(self) -> HyperParams:
        return HyperParams(self.e, self.d, self.c)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Example:
    id: str
    text: np.ndarray        # (N,) int ids, no padding
    mel: np.ndarray         # (F, T)
    linear: np.ndarray      # (F', 4T)

    def __post_init__(self):
        if self.linear.shape[1] != 4 * self.mel.shape[1]:
            raise ValueError(f"{self.id}: linear frames {self.linear.shape[1]} != 4 x mel frames {self.mel.shape[1]}")


@dataclass
class Batch:
    text: np.ndarray            # (B, N) int, NULL padded
    text_lengths: np.ndarray
    mel: np.ndarray             # (B, F, T)
    mel_lengths: np.ndarray
    linear: np.ndarray | None = None   # (B, F', 4T)
    ids: list = field(default_factory=list)

    @property
    def mel_mask(self):
        return time_mask(self.mel_lengths, self.mel.shape[2])

    @property
    def linear_mask(self):
        return time_mask(4 * self.mel_lengths, 4 * self.mel.shape[2])


def make_batch(examples, dtype=np.float32) -> Batch:
    """Right-pad texts with NULL and spectrograms with zeros."""
    if not examples:
        raise ValueError("empty batch")
    B = len(examples)
    N = max(len(ex.text) for ex in examples)
    T = max(ex.mel.shape[1] for ex in examples)
    F = examples[0].mel.shape[0]
    Fp = examples[0].linear.shape[0]
    text = np.zeros((B, N), dtype=np.int64)
    mel = np.zeros((B, F, T), dtype=dtype)
    lin = np.zeros((B, Fp, 4 * T), dtype=dtype)
    for b, ex in enumerate(examples):
        text[b, :len(ex.text)] = ex.text
        mel[b, :, :ex.mel.shape[1]] = ex.mel
        lin[b, :, :ex.linear.shape[1]] = ex.linear
    return Batch(
        text=text,
        text_lengths=np.array([len(ex.text) for ex in examples]),
        mel=mel,
        mel_lengths=np.array([ex.mel.shape[1] for ex in examples]),
        linear=lin,
        ids=[ex.id for ex in examples],
    )


def shift_frames(mel: np.ndarray) -> np.ndarray:
    """Decoder input: a zero frame followed by frames 0..T-2."""
    out = np.zeros_like(mel)
    out[:, :, 1:] = mel[:, :, :-1]
    return out


def batch_indices(n_examples: int, batch_size: int, seed: int, iteration: int) -> np.ndarray:
    """Example indices for ``iteration``; the corpus is reshuffled every epoch.

    A pure function of its arguments, so resumed runs see the same batches.
    """
    per_epoch = math.ceil(n_examples / batch_size)
    epoch, k = divmod(iteration, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n_examples)
    return perm[k * batch_size:(k + 1) * batch_size]


def guided_targets(batch: Batch, g: float):
    """Guide weights and mask over (B, N, T).

    Rows of NULL padding inside valid frames get weight 1 so attention
    cannot escape the penalty by drifting onto padding.
    """
    B, N = batch.text.shape
    T = batch.mel.shape[2]
    W, mask = batch_guided_weights(batch.text_lengths, batch.mel_lengths, N, T, g)
    for b, (n, t) in enumerate(zip(batch.text_lengths, batch.mel_lengths)):
        W[b, n:, :t] = 1.0
        mask[b, :, :t] = True
    return W, mask


class Text2MelTrainer:
    def __init__(self, model: Text2Mel, config: TrainConfig):
        self.model = model
        self.config = config

    def losses(self, batch: Batch):
        """Build the loss graph on the active tape; returns tensors and A."""
        dt = self.model.dtype
        mel = batch.mel.astype(dt, copy=False)
        mask = batch.mel_mask
        logits, Y, A = self.model.forward(batch.text, shift_frames(mel))
        l_bin = bin_divergence_logits(logits, mel, mask)
        l_1 = l1_loss(Y, mel, mask)
        W, amask = guided_targets(batch, self.config.guide_width)
        l_att = attention_loss(A, W, amask)
        return l_1, l_bin, l_att, A

    def evaluate(self, batch: Batch) -> LossReport:
        l_1, l_bin, l_att, _ = self.losses(batch)
        return self._report(l_1, l_bin, l_att)

    def _report(self, l_1, l_bin, l_att):
        att = float(l_att.data)
        total = float(l_1.data) + float(l_bin.data) + (att if self.config.guided_attention else 0.0)
        return LossReport(float(l_1.data), float(l_bin.data), att, total)

    def step(self, batch: Batch) -> LossReport:
        with ad.Tape() as tape:
            l_1, l_bin, l_att, _ = self.losses(batch)
            terms = [l_1, l_bin] + ([l_att] if self.config.guided_attention else [])
            total = ad.add(*terms)
        report = self._report(l_1, l_bin, l_att)
        if not report.finite():
            raise NonFiniteLossError(report)
        tape.backward(total)
        ad.adam_step(self.model.params.values(), self.config.adam)
        return report


def crop_batch(batch: Batch, crop: int, rng: np.random.Generator) -> Batch:
    """One random ``crop``-frame mel window per example and its 4x linear window.

    Clips shorter than ``crop`` are zero-padded and masked.
    """
    B = batch.mel.shape[0]
    F, Fp = batch.mel.shape[1], batch.linear.shape[1]
    mel = np.zeros((B, F, crop), dtype=batch.mel.dtype)
    lin = np.zeros((B, Fp, 4 * crop), dtype=batch.linear.dtype)
    lengths = np.zeros(B, dtype=np.int64)
    for b in range(B):
        T = int(batch.mel_lengths[b])
        off = int(rng.integers(0, T - crop + 1)) if T > crop else 0
        n = min(crop, T)
        mel[b, :, :n] = batch.mel[b, :, off:off + n]
        lin[b, :, :4 * n] = batch.linear[b, :, 4 * off:4 * (off + n)]
        lengths[b] = n
    return Batch(batch.text, batch.text_lengths, mel, lengths, lin, batch.ids)


class SSRNTrainer:
    def __init__(self, model: SSRN, config: TrainConfig):
        self.model = model
        self.config = config

    def crop_rng(self, iteration: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, iteration, 1])

    def losses(self, batch: Batch):
        dt = self.model.dtype
        lin = batch.linear.astype(dt, copy=False)
        mask = batch.linear_mask
        logits, Z = self.model.forward(batch.mel.astype(dt, copy=False))
        return l1_loss(Z, lin, mask), bin_divergence_logits(logits, lin, mask)

    def evaluate(self, batch: Batch) -> LossReport:
        l_1, l_bin = self.losses(batch)
        return LossReport(float(l_1.data), float(l_bin.data), 0.0, float(l_1.data) + float(l_bin.data))

    def step(self, batch: Batch, iteration: int = 0, cropped: bool = False) -> LossReport:
        if not cropped:
            batch = crop_batch(batch, self.config.ssrn_crop, self.crop_rng(iteration))
        with ad.Tape() as tape:
            l_1, l_bin = self.losses(batch)
            total = ad.add(l_1, l_bin)
        report = LossReport(float(l_1.data), float(l_bin.data), 0.0, float(total.data))
        if not report.finite():
            raise NonFiniteLossError(report)
        tape.backward(total)
        ad.adam_step(self.model.params.values(), self.config.adam)
        return report


def train(trainer, examples, max_iters: int, start_iter: int = 0, log_path=None,
          ckpt_path=None, snapshot_every: int | None = None, callback=None) -> LossReport | None:
    """Run ``trainer`` from ``start_iter`` up to ``max_iters`` iterations.

    Log lines: ``iter,loss_total,loss_l1,loss_bin,loss_att,seconds``.
    Snapshots go to ``ckpt_path`` every ``snapshot_every`` iterations and at the end.
    """
    cfg = trainer.config
    snapshot_every = snapshot_every or cfg.snapshot_every
    bs = min(cfg.batch_size, len(examples))
    logf = open(log_path, "a") if log_path else None
    t0 = time.perf_counter()
    report = None
    try:
        for it in range(start_iter, max_iters):
            idx = batch_indices(len(examples), bs, cfg.seed, it)
            batch = make_batch([examples[i] for i in idx])
            if isinstance(trainer, SSRNTrainer):
                report = trainer.step(batch, it)
            else:
                report = trainer.step(batch)
            done = it + 1
            if logf:
                logf.write(f"{done},{report.total:.6f},{report.l1:.6f},{report.bin_div:.6f},"
                           f"{report.attention:.6f},{time.perf_counter() - t0:.3f}\n")
                logf.flush()
            if callback is not None:
                callback(done, report)
            if ckpt_path and (done % snapshot_every == 0 or done == max_iters):
                checkpoint.snapshot(trainer.model, ckpt_path, done)
                log.info("snapshot at iteration %d -> %s", done, ckpt_path)
    finally:
        if logf:
            logf.close()
    return report


def train_concurrently(jobs):
    """Run independent ``train`` jobs (dicts of kwargs) on separate threads."""
    with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
        futures = [pool.submit(train, **job) for job in jobs]
        return [f.result() for f in futures]


def ensure_parent(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
