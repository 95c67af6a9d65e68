"""Character vocabulary and text normalization."""
import re

import numpy as np

NULL = "\0"
VOCAB = [NULL, " "] + [chr(c) for c in range(ord("a"), ord("z") + 1)] + [".", ",", "'", "-"]
CHAR_TO_ID = {ch: i for i, ch in enumerate(VOCAB)}
VOCAB_SIZE = len(VOCAB)  # 32

_DROP = re.compile(r"[^a-z .,'\-\s]")
_SPACES = re.compile(r"\s+")


class TextError(ValueError):
    pass


def normalize_text(raw: str) -> str:
    """Lowercase, drop out-of-vocabulary characters, collapse whitespace.

    No spelling-out of numbers or abbreviations: digits are simply removed.
    """
    s = _DROP.sub("", raw.lower())
    return _SPACES.sub(" ", s).strip()


def encode(text: str, pad_to: int | None = None) -> np.ndarray:
    try:
        ids = [CHAR_TO_ID[ch] for ch in text]
    except KeyError as exc:
        raise TextError(f"character {exc.args[0]!r} is not in the vocabulary") from None
    if NULL in text:
        raise TextError("NULL may only appear as padding")
    if pad_to is not None:
        if pad_to < len(ids):
            raise TextError(f"text of length {len(ids)} does not fit pad_to={pad_to}")
        ids += [0] * (pad_to - len(ids))
    return np.asarray(ids, dtype=np.int64)


def decode(ids) -> str:
    return "".join(VOCAB[i] for i in ids if i != 0)
