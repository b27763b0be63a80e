import pytest

from permgec.vocab import Vocab


@pytest.fixture(scope="session")
def tiny_vocab() -> Vocab:
    """Closed vocabulary covering the worked examples, one insertion slot."""
    words = "i be am busy it was 20 years ago we were friends since us had been 10".split()
    return Vocab.build(words, s_count=1)


@pytest.fixture(scope="session")
def wide_vocab() -> Vocab:
    """Same inventory with a deeper insertion block."""
    words = (
        "i be am busy it was 20 years ago we were friends since us had been 10 "
        "like films when younger watched on tv a b c and"
    ).split()
    return Vocab.build(words, s_count=3)
