import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dctts import text
from dctts.text import TextError


def test_vocabulary_order():
    assert text.VOCAB_SIZE == 32
    assert text.VOCAB[0] == text.NULL and text.VOCAB[1] == " "
    assert text.CHAR_TO_ID["a"] == 2 and text.CHAR_TO_ID["z"] == 27
    assert text.VOCAB[28:] == [".", ",", "'", "-"]


@pytest.mark.parametrize("raw,norm", [
    ("Hello, World!", "hello, world"),
    ("ICASSP  2018", "icassp"),
    ("", ""),
    ("  Tab\tand\nnewline ", "tab and newline"),
    ("Don't re-enter.", "don't re-enter."),
])
def test_normalize(raw, norm):
    assert text.normalize_text(raw) == norm


def test_encode_padding():
    np.testing.assert_array_equal(text.encode("ab", pad_to=4), [2, 3, 0, 0])
    np.testing.assert_array_equal(text.encode("", pad_to=2), [0, 0])


def test_encode_errors():
    with pytest.raises(TextError):
        text.encode("Ab")
    with pytest.raises(TextError):
        text.encode("abc", pad_to=2)


_normalized = st.text(alphabet=text.VOCAB[1:], max_size=40).map(text.normalize_text)


@given(_normalized)
def test_round_trip(s):
    assert text.decode(text.encode(s)) == s


@given(st.text(max_size=60))
def test_normalize_idempotent_and_encodable(raw):
    once = text.normalize_text(raw)
    assert text.normalize_text(once) == once
    assert np.all(text.encode(once) > 0)
