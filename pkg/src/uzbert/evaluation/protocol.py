"""Masked-word top-k evaluation: windowing, scoring, aggregation, reporting."""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Protocol, Sequence

import numpy as np

SINGLE_TOKEN = "single-token-words-only"
ALL_WORDS = "all-words"


class EvaluationError(ValueError):
    pass


class SkipSequence(Exception):
    """Raised by a predictor that cannot score a sequence (e.g. multi-piece gold word)."""


@dataclass(frozen=True)
class EvalConfig:
    window_words: int = 128
    stride_words: int = 64
    top_ks: tuple[int, ...] = (1, 3, 5)
    num_runs: int = 5
    rng_seed: int = 0
    maskable_policy: str = SINGLE_TOKEN

    def __post_init__(self):
        object.__setattr__(self, "top_ks", tuple(self.top_ks))
        if self.window_words < 1:
            raise EvaluationError("window_words must be positive")
        if not 1 <= self.stride_words <= self.window_words:
            raise EvaluationError(
                f"stride_words must be in [1, {self.window_words}], got {self.stride_words}"
            )
        if not self.top_ks or list(self.top_ks) != sorted(set(self.top_ks)) or self.top_ks[0] < 1:
            raise EvaluationError(f"top_ks must be distinct, ascending and >= 1, got {self.top_ks}")
        if self.num_runs < 1:
            raise EvaluationError("num_runs must be at least 1")
        if self.maskable_policy not in (SINGLE_TOKEN, ALL_WORDS):
            raise EvaluationError(f"unknown maskable_policy {self.maskable_policy!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["top_ks"] = list(self.top_ks)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        unknown = sorted(set(data) - {f.name for f in fields(cls)})
        if unknown:
            raise EvaluationError(f"eval: unknown keys {unknown}")
        return cls(**data)


@dataclass(frozen=True)
class EvalSequence:
    words: tuple[str, ...]
    masked_index: int
    offset: int = 0

    @property
    def gold_word(self) -> str:
        return self.words[self.masked_index]


class Predictor(Protocol):
    name: str

    def predict(self, words: Sequence[str], masked_index: int, k: int) -> list[str]:
        """Up to ``k`` candidate words for the masked slot, best first."""
        ...


def window_count(n_words: int, window: int, stride: int) -> int:
    return (n_words - window) // stride + 1 if n_words >= window else 0


def _window_rng(seed: int, run: int, offset: int) -> np.random.Generator:
    return np.random.default_rng([seed, run, offset])


def make_eval_sequences(text: str, config: EvalConfig, run: int = 0,
                        is_maskable: Callable[[str], bool] | None = None) -> list[EvalSequence]:
    """Cut ``text`` into overlapping windows and mask one word in each.

    The masked position is drawn from a generator keyed on
    ``(seed, run, window offset)``, so it does not depend on how many
    windows or runs are generated. ``is_maskable`` narrows the candidates;
    a window with no maskable word falls back to all positions and will be
    skipped by a predictor that cannot handle it.
    """
    words = text.split()
    W, S = config.window_words, config.stride_words
    if len(words) < W:
        raise EvaluationError(f"text has {len(words)} words; at least {W} are required for one window")
    out = []
    for offset in range(0, len(words) - W + 1, S):
        window = tuple(words[offset:offset + W])
        candidates = list(range(W))
        if is_maskable is not None:
            allowed = [i for i in candidates if is_maskable(window[i])]
            candidates = allowed or candidates
        idx = candidates[int(_window_rng(config.rng_seed, run, offset).integers(len(candidates)))]
        out.append(EvalSequence(window, idx, offset))
    return out


@dataclass
class RunScore:
    accuracy: dict[int, float]
    scored: int
    skipped: int

    @property
    def generated(self) -> int:
        return self.scored + self.skipped


def score_run(sequences: Sequence[EvalSequence], predictor: Predictor,
              top_ks: Sequence[int]) -> RunScore:
    """Top-k accuracy in percent over the sequences the predictor could score.

    The predictor is asked once for ``max(top_ks)`` candidates and every k
    reads a prefix of that list, which makes accuracy monotone in k.
    """
    kmax = max(top_ks)
    hits = {k: 0 for k in top_ks}
    scored = skipped = 0
    for seq in sequences:
        try:
            ranked = list(predictor.predict(seq.words, seq.masked_index, kmax))[:kmax]
        except SkipSequence:
            skipped += 1
            continue
        scored += 1
        gold = seq.gold_word
        rank = ranked.index(gold) if gold in ranked else None
        for k in top_ks:
            if rank is not None and rank < k:
                hits[k] += 1
    if scored == 0:
        raise EvaluationError(f"predictor {getattr(predictor, 'name', predictor)!r} scored no sequences")
    return RunScore({k: 100.0 * hits[k] / scored for k in top_ks}, scored, skipped)


def aggregate_runs(runs: Sequence[dict[int, float]]) -> dict[int, tuple[float, float]]:
    """Mean and population standard deviation per k."""
    if not runs:
        raise EvaluationError("no runs to aggregate")
    out = {}
    for k in runs[0]:
        values = np.array([r[k] for r in runs], dtype=np.float64)
        out[k] = (float(values.mean()), float(values.std()))
    return out


def format_cell(mean: float, std: float) -> str:
    """Render like the published table, e.g. ``64.06 (1.08%)``."""
    return f"{mean:.2f} ({std:.2f}%)"


@dataclass
class ReportCell:
    dataset: str
    predictor: str
    sequences: int
    per_run: list[dict[int, float]]
    scored: list[int]
    skipped: list[int]
    mean_std: dict[int, tuple[float, float]] = field(init=False)

    def __post_init__(self):
        self.mean_std = aggregate_runs(self.per_run)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "predictor": self.predictor,
            "sequences": self.sequences,
            "scored_per_run": self.scored,
            "skipped_per_run": self.skipped,
            "runs": [{str(k): round(v, 6) for k, v in r.items()} for r in self.per_run],
            "top_k": {
                str(k): {"mean": round(m, 6), "std": round(s, 6), "formatted": format_cell(m, s)}
                for k, (m, s) in self.mean_std.items()
            },
        }


@dataclass
class EvalReport:
    cells: list[ReportCell]
    config: EvalConfig
    extra: dict = field(default_factory=dict)

    def cell(self, dataset: str, predictor: str) -> ReportCell:
        for c in self.cells:
            if c.dataset == dataset and c.predictor == predictor:
                return c
        raise KeyError((dataset, predictor))

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "cells": [c.to_dict() for c in self.cells], **self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_table(self) -> str:
        header = ["Model", "Evaluation dataset", *(f"Top {k} Match" for k in self.config.top_ks)]
        rows = [
            [c.predictor, c.dataset, *(format_cell(*c.mean_std[k]) for k in self.config.top_ks)]
            for c in self.cells
        ]
        widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in [header, *rows]]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def run_evaluation(datasets: Sequence[tuple[str, str]], predictors: Sequence[Predictor],
                   config: EvalConfig, is_maskable: Callable[[str], bool] | None = None) -> EvalReport:
    """Score every (dataset, predictor) pair over ``config.num_runs`` mask draws.

    Rows come out dataset-major, predictor-minor, the published table's order.
    Nothing is returned unless every cell completes.
    """
    maskable = is_maskable if config.maskable_policy == SINGLE_TOKEN else None
    cells = []
    for tag, text in datasets:
        runs = [make_eval_sequences(text, config, r, maskable) for r in range(config.num_runs)]
        for predictor in predictors:
            scores = [score_run(seqs, predictor, config.top_ks) for seqs in runs]
            cells.append(ReportCell(
                dataset=tag, predictor=predictor.name, sequences=len(runs[0]),
                per_run=[s.accuracy for s in scores],
                scored=[s.scored for s in scores], skipped=[s.skipped for s in scores],
            ))
    return EvalReport(cells, config)


_CELL_RE = re.compile(r"\d{1,3}\.\d{2} \(\d{1,3}\.\d{2}%\)")


def is_table_cell(text: str) -> bool:
    return _CELL_RE.fullmatch(text) is not None
