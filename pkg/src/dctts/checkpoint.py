"""Named-tensor container shared by checkpoints and the feature cache.

Layout (little-endian): magic ``b"DCTS"``, u32 version, u32 tensor count, then
per tensor: u32 name length, UTF-8 name, u32 rank, rank x u32 dims, float32
data.
"""
from __future__ import annotations

import os
import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"DCTS"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray]):
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)


def load_tensors(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated file")
        out = buf[pos:pos + n]
        pos += n
        return out

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes")
    return out


def snapshot(model, path, iteration: int = 0):
    """Write parameters, ADAM moments and step counts of ``model``."""
    t = OrderedDict()
    t["meta.hparams"] = np.asarray(model.hp.as_tuple(), dtype=np.float32)
    t["meta.iteration"] = np.asarray([iteration], dtype=np.float32)
    for name, p in model.params.items():
        t[name] = p.data
        t[f"{name}.adam_m"] = p.adam_m
        t[f"{name}.adam_v"] = p.adam_v
        t[f"{name}.step"] = np.asarray([p.step], dtype=np.float32)
    save_tensors(path, t)


def read_hparams(path):
    from .networks import HyperParams

    t = load_tensors(path)
    if "meta.hparams" not in t:
        raise CheckpointError(f"{path}: not a model checkpoint")
    return HyperParams(*(int(v) for v in t["meta.hparams"]))


def restore(model, path) -> int:
    """Load a snapshot into ``model`` in place; returns the stored iteration."""
    t = load_tensors(path)
    expected = {"meta.hparams", "meta.iteration"}
    for name in model.params:
        expected |= {name, f"{name}.adam_m", f"{name}.adam_v", f"{name}.step"}
    if set(t) != expected:
        missing = sorted(expected - set(t))[:3]
        extra = sorted(set(t) - expected)[:3]
        raise CheckpointError(
            f"{path}: parameter names do not match {model.kind} (missing {missing}, unexpected {extra})")
    if tuple(int(v) for v in t["meta.hparams"]) != model.hp.as_tuple():
        raise CheckpointError(f"{path}: hyperparameters {t['meta.hparams']} != {model.hp.as_tuple()}")
    for name, p in model.params.items():
        if t[name].shape != p.shape:
            raise CheckpointError(f"{path}: {name} has shape {t[name].shape}, expected {p.shape}")
        dt = p.data.dtype
        p.data = t[name].astype(dt)
        p.adam_m = t[f"{name}.adam_m"].astype(dt)
        p.adam_v = t[f"{name}.adam_v"].astype(dt)
        p.step = int(t[f"{name}.step"][0])
        p.zero_grad()
    return int(t["meta.iteration"][0])
