from pathlib import Path

import pytest

import uzbert
from uzbert.corpus import normalize_documents, read_raw_documents, split_sentences, word_frequencies
from uzbert.tokenizer import TokenizerConfig, train_wordpiece

DATA = Path(uzbert.__file__).parent / "data" / "desk"
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_docs():
    docs, dropped = normalize_documents(read_raw_documents(sorted((DATA / "raw").glob("*.txt"))))
    assert dropped == 0
    return [split_sentences(d) for d in docs]


@pytest.fixture(scope="session")
def desk_vocab(desk_docs):
    return train_wordpiece(word_frequencies(desk_docs), TokenizerConfig(vocab_size=500))
