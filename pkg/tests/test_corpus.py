import logging

import numpy as np
import pytest
from scipy.io import wavfile

from dctts import corpus, dsp, text
from dctts.corpus import CorpusError


def _layout(tmp_path, lines, clips=()):
    (tmp_path / "wavs").mkdir(exist_ok=True)
    for clip_id, wav in clips:
        dsp.write_wav(tmp_path / "wavs" / f"{clip_id}.wav", wav)
    meta = tmp_path / "metadata.csv"
    meta.write_text("".join(f"{ln}\n" for ln in lines), encoding="utf-8")
    return meta


def test_parse_ljspeech_line(tmp_path):
    meta = _layout(tmp_path, ["LJ001-0001|Printing,|printing,"], [("LJ001-0001", np.zeros(2000))])
    (rec,) = corpus.load_corpus(meta)
    assert rec.id == "LJ001-0001"
    assert rec.raw == "Printing," and rec.normalized == "printing,"
    assert rec.audio_path == tmp_path / "wavs" / "LJ001-0001.wav"


def test_two_field_line(tmp_path):
    meta = _layout(tmp_path, ["a1|Hello There!"], [("a1", np.zeros(2000))])
    (rec,) = corpus.load_corpus(meta)
    assert rec.raw == "Hello There!" and rec.normalized == "hello there"


def test_empty_file_warns(tmp_path, caplog):
    meta = _layout(tmp_path, [])
    with caplog.at_level(logging.WARNING):
        assert corpus.load_corpus(meta) == []
    assert "empty corpus" in caplog.text


def test_malformed_line_reports_line_number(tmp_path):
    meta = _layout(tmp_path, ["a1|x|x", "just text"], [("a1", np.zeros(2000))])
    with pytest.raises(CorpusError, match=r"metadata.csv:2:"):
        corpus.load_corpus(meta)


def test_missing_audio_and_duplicates(tmp_path):
    meta = _layout(tmp_path, ["a1|x|x", "a2|y|y"], [("a1", np.zeros(2000))])
    with pytest.raises(CorpusError, match="missing audio"):
        corpus.load_corpus(meta)
    meta = _layout(tmp_path, ["a1|x|x", "a1|y|y"])
    with pytest.raises(CorpusError, match="duplicate"):
        corpus.load_corpus(meta)
    with pytest.raises(CorpusError):
        corpus.load_corpus(tmp_path / "nope.csv")


def test_one_second_clip_frame_counts(tmp_path):
    wav = 0.3 * np.sin(2 * np.pi * 440 * np.arange(22050) / 22050)
    mel, lin = corpus.features(wav)
    assert mel.shape == (80, 22)
    assert lin.shape == (513, 88)
    assert dsp.frames_for_samples(22050) == 87
    assert not lin[:, 87].any()


def test_preprocess_is_byte_identical(tmp_path, toy_dir, toy_cache):
    records = corpus.load_corpus(toy_dir / "metadata.csv")[:5]
    again = corpus.preprocess(records, tmp_path / "again", workers=2)
    for r in records:
        assert (again / f"{r.id}.dcts").read_bytes() == (toy_cache / f"{r.id}.dcts").read_bytes()


def test_cache_round_trip(toy_dir, toy_examples):
    records = corpus.load_corpus(toy_dir / "metadata.csv")
    assert [ex.id for ex in toy_examples] == [r.id for r in records]
    ex = toy_examples[0]
    np.testing.assert_array_equal(ex.text, text.encode(records[0].normalized))
    wav, _ = dsp.read_wav(records[0].audio_path)
    mel, lin = corpus.features(wav)
    np.testing.assert_array_equal(ex.mel, mel)
    np.testing.assert_array_equal(ex.linear, lin)


def test_short_clip_rejected(tmp_path):
    meta = _layout(tmp_path, ["s|ab|ab"], [("s", np.zeros(220))])
    with pytest.raises(CorpusError, match="too short for one window"):
        corpus.preprocess(corpus.load_corpus(meta), tmp_path / "c")


def test_wrong_sample_rate(tmp_path):
    meta = _layout(tmp_path, ["r|ab|ab"])
    wavfile.write(tmp_path / "wavs" / "r.wav", 16000, np.zeros(16000, np.int16))
    with pytest.raises(CorpusError, match="16000"):
        corpus.preprocess(corpus.load_corpus(meta), tmp_path / "c")


def test_empty_transcript_rejected(tmp_path):
    meta = _layout(tmp_path, ["e|1999|1999"], [("e", np.zeros(4000))])
    with pytest.raises(CorpusError, match="empty"):
        corpus.preprocess(corpus.load_corpus(meta), tmp_path / "c")


def test_cache_env_override(monkeypatch, tmp_path):
    monkeypatch.delenv(corpus.CACHE_ENV, raising=False)
    assert corpus.cache_dir("default") == corpus.Path("default")
    monkeypatch.setenv(corpus.CACHE_ENV, str(tmp_path))
    assert corpus.cache_dir("default") == tmp_path


def test_load_cache_errors(tmp_path):
    with pytest.raises(CorpusError, match="preprocess"):
        corpus.load_cache(tmp_path)
    with pytest.raises(CorpusError, match="not in cache"):
        corpus.load_cache(tmp_path, ["x"])


def test_toy_corpus_shape(toy_dir, toy_examples):
    assert len(toy_examples) == 50
    lines = (toy_dir / "metadata.csv").read_text().splitlines()
    assert lines[0].startswith("TOY-0000|")
    for ex in toy_examples:
        n = len(ex.text)
        # 2048 n samples -> T' = 8n + 1 -> T = ceil((8n + 1) / 4) = 2n + 1
        assert ex.mel.shape[1] == 2 * n + 1
        assert set(text.decode(ex.text)) <= set(corpus.TOY_LETTERS + " .")


def test_letter_tones_are_distinct():
    freqs = []
    for ch in corpus.TOY_LETTERS:
        spec = np.abs(np.fft.rfft(corpus.char_tone(ch)))
        freqs.append(int(np.argmax(spec)))
    assert len(set(freqs)) == len(freqs)
    assert not corpus.char_tone(" ").any() and not corpus.char_tone(".").any()
