"""WordPiece vocabulary training, greedy longest-match encoding and pair packing."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
NUM_SPECIAL = len(SPECIAL_TOKENS)


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizerConfig:
    vocab_size: int = 30_000
    lowercase: bool = True
    continuation_prefix: str = "##"
    max_chars_per_word: int = 100
    min_pair_frequency: int = 2

    def __post_init__(self):
        if self.vocab_size <= NUM_SPECIAL:
            raise TokenizerError(f"vocab_size must exceed {NUM_SPECIAL}, got {self.vocab_size}")
        if not self.continuation_prefix:
            raise TokenizerError("continuation_prefix must be non-empty")
        if self.max_chars_per_word < 1 or self.min_pair_frequency < 1:
            raise TokenizerError("max_chars_per_word and min_pair_frequency must be >= 1")


class Vocabulary:
    """Ordered token list; the position of a token is its id."""

    def __init__(self, tokens: Sequence[str], continuation_prefix: str = "##"):
        tokens = list(tokens)
        if tuple(tokens[:NUM_SPECIAL]) != SPECIAL_TOKENS:
            raise TokenizerError(f"vocabulary must start with {list(SPECIAL_TOKENS)}")
        self.tokens = tokens
        self.continuation_prefix = continuation_prefix
        self.index = {tok: i for i, tok in enumerate(tokens)}
        if len(self.index) != len(tokens):
            dupes = [t for t, c in Counter(tokens).items() if c > 1]
            raise TokenizerError(f"duplicate vocabulary entries: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def is_special(self, token_id: int) -> bool:
        return 0 <= token_id < NUM_SPECIAL

    def is_continuation(self, token_id: int) -> bool:
        return self.tokens[token_id].startswith(self.continuation_prefix) and not self.is_special(token_id)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, continuation_prefix: str = "##") -> "Vocabulary":
        text = Path(path).read_bytes().decode("utf-8")
        lines = text.replace("\r\n", "\n").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines, continuation_prefix)


# -- training ---------------------------------------------------------------

def _initial_split(word: str, prefix: str) -> tuple[str, ...]:
    return (word[0],) + tuple(prefix + ch for ch in word[1:])


def _merge_symbols(left: str, right: str, prefix: str) -> str:
    return left + right[len(prefix):]


def train_wordpiece(word_counts: Mapping[str, int], config: TokenizerConfig) -> Vocabulary:
    """Learn a WordPiece vocabulary from a word-frequency table.

    Starts from every character seen (word-initial and ``##`` form) and
    repeatedly merges the adjacent pair with the highest
    ``count(pair) / (count(left) * count(right))``. Equal scores go to the
    lexicographically smallest merged token. Training stops when the
    vocabulary is full or no pair occurs ``min_pair_frequency`` times.
    """
    prefix = config.continuation_prefix
    words = {w: c for w, c in word_counts.items() if w and c > 0}
    if not words:
        raise TokenizerError("cannot train a vocabulary on an empty corpus")

    alphabet = sorted({ch for w in words for ch in w})
    base = [*SPECIAL_TOKENS, *alphabet, *(prefix + ch for ch in alphabet)]
    if config.vocab_size < len(base):
        raise TokenizerError(
            f"vocab_size {config.vocab_size} is smaller than specials + alphabet ({len(base)})"
        )
    vocab = list(base)
    known = set(vocab)

    splits = {w: _initial_split(w, prefix) for w in sorted(words)}
    while len(vocab) < config.vocab_size:
        pair_counts: Counter = Counter()
        symbol_counts: Counter = Counter()
        for w, symbols in splits.items():
            freq = words[w]
            for s in symbols:
                symbol_counts[s] += freq
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] += freq

        best = None
        best_key = None
        for (left, right), n in pair_counts.items():
            if n < config.min_pair_frequency:
                continue
            score = n / (symbol_counts[left] * symbol_counts[right])
            merged = _merge_symbols(left, right, prefix)
            # max score, then min merged token, then min pair for full determinism
            key = (-score, merged, left)
            if best_key is None or key < best_key:
                best_key, best = key, (left, right)
        if best is None:
            break

        left, right = best
        merged = _merge_symbols(left, right, prefix)
        if merged not in known:
            vocab.append(merged)
            known.add(merged)
        for w, symbols in splits.items():
            if len(symbols) < 2:
                continue
            out: list[str] = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            splits[w] = tuple(out)
    return Vocabulary(vocab, prefix)


# -- encoding ---------------------------------------------------------------

def tokenize_word(word: str, vocab: Vocabulary, max_chars_per_word: int = 100) -> list[str]:
    """Greedy longest-match-first split; any dead end turns the word into [UNK]."""
    if len(word) > max_chars_per_word:
        return [UNK]
    prefix = vocab.continuation_prefix
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while end > start:
            candidate = word[start:end] if start == 0 else prefix + word[start:end]
            if candidate in vocab.index:
                piece = candidate
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


def encode_word(word: str, vocab: Vocabulary, max_chars_per_word: int = 100) -> list[int]:
    return [vocab.index[p] for p in tokenize_word(word, vocab, max_chars_per_word)]


def encode_text(text: str, vocab: Vocabulary, max_chars_per_word: int = 100) -> list[int]:
    ids: list[int] = []
    for word in text.split():
        ids.extend(encode_word(word, vocab, max_chars_per_word))
    return ids


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Join pieces back into words; [PAD], [CLS] and [SEP] are dropped."""
    prefix = vocab.continuation_prefix
    words: list[str] = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise TokenizerError(f"token id {i} out of range for vocabulary of {len(vocab)}")
        if i in (PAD_ID, CLS_ID, SEP_ID):
            continue
        tok = vocab.tokens[i]
        if vocab.is_continuation(i) and words:
            words[-1] += tok[len(prefix):]
        else:
            words.append(tok)
    return " ".join(words)


def coverage(texts: Iterable[str], vocab: Vocabulary, max_chars_per_word: int = 100) -> float:
    """Share of produced tokens that are not [UNK]."""
    total = unk = 0
    for text in texts:
        ids = encode_text(text, vocab, max_chars_per_word)
        total += len(ids)
        unk += sum(1 for i in ids if i == UNK_ID)
    return 1.0 if total == 0 else (total - unk) / total


# -- sequence pairs ---------------------------------------------------------

def truncate_pair(a: Sequence[int], b: Sequence[int], budget: int) -> tuple[list[int], list[int]]:
    """Drop tail tokens from the longer side one at a time (``b`` on ties)."""
    a, b = list(a), list(b)
    while len(a) + len(b) > budget:
        if len(a) > len(b):
            a.pop()
        else:
            b.pop()
    return a, b


def build_pair_input(
    a: Sequence[int], b: Sequence[int], max_len: int
) -> tuple[list[int], list[int], list[int]]:
    """Pack ``[CLS] a [SEP] b [SEP]`` padded to ``max_len``.

    Returns (token ids, segment ids, attention mask).
    """
    if max_len < 5:
        raise TokenizerError(f"max_len must be at least 5, got {max_len}")
    if not a or not b:
        raise TokenizerError("both segments must hold at least one token")
    a, b = truncate_pair(a, b, max_len - 3)
    ids = [CLS_ID, *a, SEP_ID, *b, SEP_ID]
    segments = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    mask = [1] * len(ids)
    pad = max_len - len(ids)
    return ids + [PAD_ID] * pad, segments + [0] * pad, mask + [0] * pad
