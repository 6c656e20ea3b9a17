"""Corpus ingestion: normalization, sentence splitting, statistics and splits.

The on-disk corpus layout is the usual one for MLM pretraining: UTF-8 text,
one sentence per line, documents separated by a single blank line.
"""
from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_ABBREVIATIONS = frozenset({"ш.", "й."})
DEFAULT_VALIDATION_FRACTION = 0.014
SENTENCE_TERMINATORS = ".!?"


class CorpusError(ValueError):
    pass


class InvalidUtf8Error(CorpusError):
    """Raised for byte input that is not valid UTF-8."""

    def __init__(self, offset: int, reason: str):
        super().__init__(f"invalid UTF-8 at byte offset {offset}: {reason}")
        self.offset = offset


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    source_tag: str = ""


@dataclass(frozen=True)
class SentenceDocument:
    id: str
    sentences: tuple[str, ...]
    source_tag: str = ""

    @property
    def text(self) -> str:
        return " ".join(self.sentences)


@dataclass
class CorpusStats:
    document_count: int = 0
    word_count: int = 0
    dropped_count: int = 0
    per_source: dict[str, dict[str, int]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "document_count": self.document_count,
            "word_count": self.word_count,
            "dropped_count": self.dropped_count,
            "per_source": {k: dict(v) for k, v in sorted(self.per_source.items())},
        }


@dataclass(frozen=True)
class SplitSpec:
    validation_fraction: float = DEFAULT_VALIDATION_FRACTION
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.validation_fraction < 1.0:
            raise CorpusError(
                f"validation_fraction must be in [0, 1), got {self.validation_fraction}"
            )


def decode_utf8(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidUtf8Error(exc.start, exc.reason) from None


def _drop_controls(text: str) -> str:
    # Whitespace controls (\t, \n, \x1c..\x1f, \x85) survive as separators.
    return "".join(
        ch for ch in text
        if ch.isspace() or unicodedata.category(ch) != "Cc"
    )


def normalize_text(raw: str | bytes) -> str:
    """Canonicalize text: NFC, full lowercase, no control chars, single spaces."""
    text = decode_utf8(raw) if isinstance(raw, (bytes, bytearray)) else raw
    text = unicodedata.normalize("NFC", text)
    text = unicodedata.normalize("NFC", text.lower())
    text = _drop_controls(text)
    return " ".join(text.split())


def count_words(text: str) -> int:
    """Whitespace-delimited word count, as ``wc -w`` reports it."""
    return len(text.split())


def _ends_sentence(token: str, abbreviations: frozenset[str] | set[str]) -> bool:
    if not token or token[-1] not in SENTENCE_TERMINATORS:
        return False
    if token[-1] == "." and token in abbreviations:
        return False
    return True


def split_sentences(
    doc: Document, abbreviations: Iterable[str] = DEFAULT_ABBREVIATIONS
) -> SentenceDocument:
    """Split at '.', '!' or '?' followed by whitespace, skipping abbreviations.

    A terminator cluster such as ``?!`` stays attached to its sentence, and
    text without any terminator becomes a single sentence.
    """
    abbrevs = frozenset(normalize_text(a) for a in abbreviations)
    sentences: list[str] = []
    current: list[str] = []
    for token in doc.text.split():
        current.append(token)
        if _ends_sentence(token, abbrevs):
            sentences.append(" ".join(current))
            current = []
    if current:
        sentences.append(" ".join(current))
    return SentenceDocument(doc.id, tuple(sentences), doc.source_tag)


def normalize_documents(docs: Iterable[Document | tuple[str, bytes, str]]) -> tuple[list[Document], int]:
    """Normalize documents, dropping (and counting) invalid or empty ones.

    Items may be ``Document`` instances or ``(id, raw_bytes, source_tag)``
    triples straight from disk.
    """
    kept: list[Document] = []
    dropped = 0
    seen: set[str] = set()
    for item in docs:
        if isinstance(item, Document):
            doc_id, raw, tag = item.id, item.text, item.source_tag
        else:
            doc_id, raw, tag = item
        if doc_id in seen:
            raise CorpusError(f"duplicate document id {doc_id!r}")
        seen.add(doc_id)
        try:
            text = normalize_text(raw)
        except InvalidUtf8Error:
            dropped += 1
            continue
        if not text:
            dropped += 1
            continue
        kept.append(Document(doc_id, text, tag))
    return kept, dropped


def corpus_stats(docs: Iterable[Document], dropped: int = 0) -> CorpusStats:
    stats = CorpusStats(dropped_count=dropped)
    for doc in docs:
        words = count_words(doc.text)
        if words == 0:
            stats.dropped_count += 1
            continue
        stats.document_count += 1
        stats.word_count += words
        src = stats.per_source.setdefault(doc.source_tag, {"document_count": 0, "word_count": 0})
        src["document_count"] += 1
        src["word_count"] += words
    return stats


def split_corpus(
    docs: Sequence[Document], spec: SplitSpec
) -> tuple[list[Document], list[Document]]:
    """Partition documents into (train, validation) by word share.

    Documents are sorted by id before the seeded shuffle, so the result does
    not depend on input order. Validation takes shuffled documents until its
    word count reaches the requested fraction of the corpus.
    """
    if not docs:
        raise CorpusError("cannot split an empty corpus")
    ordered = sorted(docs, key=lambda d: d.id)
    perm = np.random.default_rng(spec.rng_seed).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    target = spec.validation_fraction * sum(count_words(d.text) for d in ordered)

    cut = 0
    val_words = 0
    while cut < len(shuffled) and val_words < target:
        val_words += count_words(shuffled[cut].text)
        cut += 1
    return shuffled[cut:], shuffled[:cut]


# -- file formats -----------------------------------------------------------

def load_abbreviations(path: str | Path) -> frozenset[str]:
    entries = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            entries.add(normalize_text(line))
    return frozenset(entries)


def read_corpus(path: str | Path, source_tag: str = "") -> list[SentenceDocument]:
    """Read the blank-line separated, one-sentence-per-line corpus format."""
    text = Path(path).read_bytes().decode("utf-8").replace("\r\n", "\n").replace("\r", "\n")
    docs: list[SentenceDocument] = []
    block: list[str] = []
    stem = Path(path).stem

    def flush():
        if block:
            docs.append(SentenceDocument(f"{stem}:{len(docs)}", tuple(block), source_tag))
            block.clear()

    for line in text.split("\n"):
        line = line.strip()
        if line:
            block.append(line)
        else:
            flush()
    flush()
    return docs


def write_corpus(docs: Iterable[SentenceDocument], path: str | Path) -> None:
    blocks = ["\n".join(d.sentences) for d in docs if d.sentences]
    Path(path).write_text("\n\n".join(blocks) + ("\n" if blocks else ""), encoding="utf-8")


def read_raw_documents(paths: Iterable[str | Path], source_tag: str = "") -> list[tuple[str, bytes, str]]:
    """One raw document per file; bytes are kept for later UTF-8 validation."""
    out = []
    for p in sorted(Path(x) for x in paths):
        out.append((p.name, p.read_bytes(), source_tag or p.parent.name))
    return out


def word_frequencies(docs: Iterable[SentenceDocument | Document]) -> Counter:
    counts: Counter = Counter()
    for doc in docs:
        counts.update(doc.text.split())
    return counts
