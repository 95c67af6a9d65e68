import numpy as np
import pytest

from dctts import corpus


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    corpus.make_toy_corpus(root, n_clips=50, seed=0)
    return root


@pytest.fixture(scope="session")
def toy_cache(toy_dir, tmp_path_factory):
    records = corpus.load_corpus(toy_dir / "metadata.csv")
    return corpus.preprocess(records, tmp_path_factory.mktemp("cache"))


@pytest.fixture(scope="session")
def toy_examples(toy_cache):
    return corpus.load_cache(toy_cache)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance criteria bookkeeping -----------------------------------------

CRITERIA: dict[int, tuple[bool, str]] = {}


class _Criterion:
    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.details = []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        detail = "; ".join(self.details)
        if not ok:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        line = f"criterion {self.number} ({self.title}): {'PASS' if ok else 'FAIL'} - {detail}"
        CRITERIA[self.number] = (ok, line)
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n][1])
