"""Predictors for the masked-word protocol: the trained encoder and test fixtures."""
from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from ..model import Batch, EncoderState, forward
from ..tokenizer import CLS_ID, MASK_ID, NUM_SPECIAL, SEP_ID, UNK_ID, Vocabulary, encode_word
from .protocol import ALL_WORDS, SINGLE_TOKEN, EvalSequence, SkipSequence


class CheckpointPredictor:
    """Ranks vocabulary words for a [MASK] slot with a trained encoder."""

    def __init__(self, state: EncoderState, vocab: Vocabulary, name: str = "UzBERT",
                 maskable_policy: str = SINGLE_TOKEN, max_chars_per_word: int = 100):
        if len(vocab) > state.config.vocab_size:
            raise ValueError("vocabulary is larger than the model's output layer")
        self.state = state
        self.vocab = vocab
        self.name = name
        self.policy = maskable_policy
        self.max_chars = max_chars_per_word
        word_start = np.zeros(state.config.vocab_size, dtype=bool)
        continuation = np.zeros(state.config.vocab_size, dtype=bool)
        for i in range(NUM_SPECIAL, len(vocab)):
            if vocab.is_continuation(i):
                continuation[i] = True
            else:
                word_start[i] = True
        self._word_start = word_start
        self._continuation = continuation

    def is_maskable(self, word: str) -> bool:
        ids = encode_word(word, self.vocab, self.max_chars)
        return len(ids) == 1 and ids[0] != UNK_ID

    def _encode(self, words: Sequence[str]) -> list[int]:
        ids: list[int] = []
        for w in words:
            ids.extend(encode_word(w, self.vocab, self.max_chars))
        return ids

    def _input_ids(self, words: Sequence[str], masked_index: int, n_mask: int,
                   pair_break: int | None = None) -> tuple[list[int], list[int], int]:
        if pair_break is not None:
            if not 0 < pair_break < len(words):
                raise ValueError("pair_break must split the window into two non-empty parts")
            return self._pair_ids(words, masked_index, n_mask, pair_break)
        before = self._encode(words[:masked_index])
        after = self._encode(words[masked_index + 1:])
        budget = self.state.config.max_positions - 2 - n_mask
        if budget < 0:
            raise SkipSequence
        # symmetric truncation around the mask; a short side donates its share
        left = min(len(before), max(budget // 2, budget - len(after)))
        right = min(len(after), budget - left)
        before = before[len(before) - left:]
        after = after[:right]
        ids = [CLS_ID, *before, *([MASK_ID] * n_mask), *after, SEP_ID]
        return ids, [0] * len(ids), 1 + len(before)

    def _pair_ids(self, words, masked_index, n_mask, pair_break):
        # [CLS] A [SEP] B [SEP], no truncation: the pair must fit
        pieces = []
        for i, w in enumerate(words):
            pieces.append([MASK_ID] * n_mask if i == masked_index else self._encode([w]))
        a = [t for p in pieces[:pair_break] for t in p]
        b = [t for p in pieces[pair_break:] for t in p]
        if len(a) + len(b) + 3 > self.state.config.max_positions:
            raise SkipSequence
        ids = [CLS_ID, *a, SEP_ID, *b, SEP_ID]
        segments = [0] * (len(a) + 2) + [1] * (len(b) + 1)
        pos = 1 + sum(len(p) for p in pieces[:masked_index]) + (masked_index >= pair_break)
        return ids, segments, pos

    def mask_logits(self, words: Sequence[str], masked_index: int, n_mask: int = 1,
                    pair_break: int | None = None) -> np.ndarray:
        ids, segments, pos = self._input_ids(words, masked_index, n_mask, pair_break)
        arr = np.array([ids])
        batch = Batch(arr, np.array([segments]), np.ones_like(arr))
        out = forward(self.state, batch, "eval")
        return out.mlm_logits[0, pos:pos + n_mask]

    def predict(self, words: Sequence[str], masked_index: int, k: int,
                pair_break: int | None = None) -> list[str]:
        """Top-k words for ``words[masked_index]``.

        With ``pair_break`` the window is fed as a sentence pair split before
        that word, the layout used in pretraining.
        """
        if k < 1:
            raise ValueError("k must be at least 1")
        gold_ids = encode_word(words[masked_index], self.vocab, self.max_chars)
        single = len(gold_ids) == 1 and gold_ids[0] != UNK_ID
        if not single and (self.policy != ALL_WORDS or UNK_ID in gold_ids):
            raise SkipSequence
        if single:
            logits = self.mask_logits(words, masked_index, 1, pair_break)[0]
            order = np.argsort(-logits, kind="stable")
            order = order[self._word_start[order]]
            return [self.vocab.tokens[i] for i in order[:k]]
        # all-words mode: one [MASK] per piece, joint argmax spelled as a word
        logits = self.mask_logits(words, masked_index, len(gold_ids), pair_break)
        first = np.where(self._word_start, logits[0], -np.inf).argmax()
        pieces = [self.vocab.tokens[first]]
        prefix = self.vocab.continuation_prefix
        for row in logits[1:]:
            nxt = np.where(self._continuation, row, -np.inf).argmax()
            pieces.append(self.vocab.tokens[nxt][len(prefix):])
        return ["".join(pieces)]


def predict_topk_wordpiece(state: EncoderState, vocab: Vocabulary, sequence: EvalSequence, k: int,
                           maskable_policy: str = SINGLE_TOKEN) -> list[str]:
    return CheckpointPredictor(state, vocab, maskable_policy=maskable_policy).predict(
        sequence.words, sequence.masked_index, k
    )


class OraclePredictor:
    """Always ranks the gold word first."""

    name = "oracle"

    def predict(self, words, masked_index, k):
        return [words[masked_index]]


class AdversarialPredictor:
    """Never returns the gold word."""

    name = "adversarial"

    def predict(self, words, masked_index, k):
        gold = words[masked_index]
        return [f"{gold}~{i}" for i in range(k)]


class UniformPredictor:
    """k distinct words drawn uniformly from a fixed word list.

    The draw is seeded by a hash of the inputs, so identical queries get
    identical answers.
    """

    def __init__(self, words: Sequence[str], seed: int = 0, name: str = "uniform"):
        self.words = sorted(set(words))
        if not self.words:
            raise ValueError("uniform predictor needs a non-empty word list")
        self.seed = seed
        self.name = name

    def predict(self, words, masked_index, k):
        h = hashlib.sha256(f"{self.seed}\x00{masked_index}\x00{' '.join(words)}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
        picks = rng.choice(len(self.words), size=min(k, len(self.words)), replace=False)
        return [self.words[i] for i in picks]
