"""8-bit binary PGM (P5) images of attention matrices.

One pixel per cell, row = character index, column = frame. Values in [0, 1]
map to 0..255 without per-image rescaling, so images diff bit-exactly.
"""
from __future__ import annotations

import numpy as np


def to_gray(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"expected a 2D matrix, got shape {A.shape}")
    return np.round(np.clip(A, 0.0, 1.0) * 255).astype(np.uint8)


def write_pgm(path, A: np.ndarray):
    img = to_gray(A)
    rows, cols = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    # header: magic, width, height, maxval separated by whitespace
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    cols, rows = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:], dtype=np.uint8)
    if pixels.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} pixels, found {pixels.size}")
    return pixels.reshape(rows, cols)
