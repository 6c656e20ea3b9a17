"""NSP pair sampling, MLM corruption and batch packing."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..corpus import SentenceDocument
from ..model.encoder import IGNORE_INDEX, Batch
from ..tokenizer import MASK_ID, NUM_SPECIAL, TokenizerError, Vocabulary, build_pair_input, encode_text
from .config import MaskingPolicy

TokenizedDoc = list[list[int]]


class PairSamplingError(ValueError):
    pass


@dataclass(frozen=True)
class PairInstance:
    a: tuple[int, ...]
    b: tuple[int, ...]
    is_next: int


def tokenize_documents(docs: Sequence[SentenceDocument], vocab: Vocabulary,
                       max_chars_per_word: int = 100) -> list[TokenizedDoc]:
    out = []
    for doc in docs:
        sentences = [encode_text(s, vocab, max_chars_per_word) for s in doc.sentences]
        sentences = [s for s in sentences if s]
        if sentences:
            out.append(sentences)
    return out


def _take_run(sentences: TokenizedDoc, start: int, budget: int, limit: int | None = None) -> tuple[list[int], int]:
    """Contiguous sentences from ``start`` while they fit; always at least one."""
    stop = len(sentences) if limit is None else limit
    run = list(sentences[start])
    end = start + 1
    while end < stop and len(run) + len(sentences[end]) <= budget:
        run.extend(sentences[end])
        end += 1
    return run, end


def _check_pool(docs: Sequence[TokenizedDoc], positive_rate: float) -> list[int]:
    multi = [i for i, d in enumerate(docs) if len(d) >= 2]
    if positive_rate > 0 and not multi:
        raise PairSamplingError("positive NSP pairs need a document with at least two sentences")
    if positive_rate < 1 and len(docs) < 2:
        raise PairSamplingError("negative NSP pairs need at least two documents")
    if not multi:
        # all-negative sampling can start anywhere
        multi = list(range(len(docs)))
    return multi


def _pair_at(docs: Sequence[TokenizedDoc], d: int, i: int, max_tokens: int,
             positive_rate: float, rng: np.random.Generator) -> PairInstance:
    budget = max(max_tokens - 3, 2)
    doc = docs[d]
    is_next = int(rng.random() < positive_rate)
    # segment A leaves room for at least one following sentence
    a, a_end = _take_run(doc, i, budget // 2, limit=max(len(doc) - 1, i + 1))
    if is_next:
        b, _ = _take_run(doc, a_end, budget - len(a))
    else:
        other = int(rng.integers(len(docs) - 1))
        other += other >= d
        start = int(rng.integers(len(docs[other])))
        b, _ = _take_run(docs[other], start, max(budget - len(a), 1))
    return PairInstance(tuple(a), tuple(b), is_next)


def sample_nsp_pair(docs: Sequence[TokenizedDoc], rng: np.random.Generator, max_tokens: int,
                    positive_rate: float = 0.5) -> PairInstance:
    """Draw one (A, B, is_next) example.

    With probability ``positive_rate`` B is the run of sentences right after
    A in the same document; otherwise B starts at a random sentence of a
    different document.
    """
    pool = _check_pool(docs, positive_rate)
    d = pool[int(rng.integers(len(pool)))]
    i = int(rng.integers(max(len(docs[d]) - 1, 1)))
    return _pair_at(docs, d, i, max_tokens, positive_rate, rng)


def make_pair_instances(docs: Sequence[TokenizedDoc], max_tokens: int, positive_rate: float,
                        rng: np.random.Generator) -> list[PairInstance]:
    """One pair per sentence that has a successor in its document."""
    pool = _check_pool(docs, positive_rate)
    out = []
    for d in pool:
        for i in range(max(len(docs[d]) - 1, 1)):
            out.append(_pair_at(docs, d, i, max_tokens, positive_rate, rng))
    return out


def apply_masking(token_ids: np.ndarray, policy: MaskingPolicy, vocab_size: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt non-special positions for MLM; returns (corrupted ids, labels).

    Unselected positions get ``IGNORE_INDEX``. Random replacements are drawn
    uniformly from the non-special ids.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    eligible = ids >= NUM_SPECIAL
    selected = eligible & (rng.random(ids.shape) < policy.select_rate)
    action = rng.random(ids.shape)
    to_mask = selected & (action < policy.mask_fraction)
    to_random = selected & ~to_mask & (action < policy.mask_fraction + policy.random_fraction)
    random_ids = rng.integers(NUM_SPECIAL, vocab_size, size=ids.shape) if vocab_size > NUM_SPECIAL \
        else np.full(ids.shape, MASK_ID)

    corrupted = ids.copy()
    corrupted[to_mask] = MASK_ID
    corrupted[to_random] = random_ids[to_random]
    labels = np.where(selected, ids, IGNORE_INDEX)
    return corrupted, labels


def build_batch(pairs: Sequence[PairInstance], sequence_length: int, policy: MaskingPolicy,
                vocab_size: int, rng: np.random.Generator) -> tuple[Batch | None, int]:
    """Pack and mask pairs into one padded batch; returns (batch, skipped count)."""
    rows, segs, masks, nsp = [], [], [], []
    skipped = 0
    for pair in pairs:
        try:
            ids, seg, att = build_pair_input(pair.a, pair.b, sequence_length)
        except TokenizerError:
            skipped += 1
            continue
        rows.append(ids)
        segs.append(seg)
        masks.append(att)
        nsp.append(pair.is_next)
    if not rows:
        return None, skipped
    ids = np.array(rows, dtype=np.int64)
    corrupted, labels = apply_masking(ids, policy, vocab_size, rng)
    return Batch(corrupted, np.array(segs), np.array(masks), labels, np.array(nsp)), skipped
