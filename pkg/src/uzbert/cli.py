"""Command-line entry point: ``uzbert <stage> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import CorpusError
from .evaluation import EvaluationError
from .model import CheckpointError
from .pipeline import (
    CONFIG_DIR_ENV,
    PREDICTORS,
    PipelineConfigError,
    PipelineRuntimeError,
    load_config,
    stage_corpus_prepare,
    stage_evaluate,
    stage_pretrain,
    stage_tokenizer_train,
)
from .tokenizer import TokenizerError
from .training import NonFiniteGradientError, PairSamplingError, TrainConfigError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
LOCK_NAME = ".uzbert.lock"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this CLI reserves 2 for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="desk.json",
                        help=f"config file path or name (searched in ${CONFIG_DIR_ENV}, then bundled configs)")
    common.add_argument("--out", type=Path, default=Path("uzbert-out"), help="output directory")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded numerics, bit-reproducible outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="uzbert", description="Desk-scale BERT pretraining pipeline for Uzbek Cyrillic.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("corpus-prepare", parents=[common], help="normalize and sentence-split raw text")
    p.add_argument("--raw", type=Path, help="raw directory (one document per .txt) or corpus file")
    p.add_argument("--abbreviations", type=Path)

    p = sub.add_parser("tokenizer-train", parents=[common], help="train the WordPiece vocabulary")
    p.add_argument("--corpus", type=Path, help="defaults to OUT/corpus.txt")

    p = sub.add_parser("pretrain", parents=[common], help="two-phase MLM+NSP pretraining")
    p.add_argument("--dry-run", action="store_true", help="print the schedule and exit")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.add_argument("--stop-after-phase", type=int, choices=(1,), help="exit after the phase-1 checkpoint")

    p = sub.add_parser("evaluate", parents=[common], help="masked-word top-k evaluation")
    p.add_argument("--predictor", choices=PREDICTORS, default="checkpoint")
    p.add_argument("--checkpoint", type=Path, help="defaults to the final pretraining checkpoint")
    return parser


@contextlib.contextmanager
def output_lock(out: Path):
    """Refuse to share an output directory with another running invocation."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineRuntimeError(f"{out} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _run(args) -> None:
    cfg = load_config(args.config, seed=args.seed, deterministic=args.deterministic)
    if args.command == "pretrain" and args.dry_run:
        for line in stage_pretrain(cfg, args.out, dry_run=True):
            print(line)
        return
    with output_lock(args.out):
        if args.command == "corpus-prepare":
            stats = stage_corpus_prepare(cfg, args.out, args.raw, args.abbreviations)
            print(json.dumps(stats.as_dict(), sort_keys=True, ensure_ascii=False))
        elif args.command == "tokenizer-train":
            info = stage_tokenizer_train(cfg, args.out, args.corpus)
            print(f"vocabulary: {info['size']} tokens (requested {info['requested_vocab_size']})")
            print(f"coverage on training corpus: {info['coverage_train']:.4f}")
            if "coverage_unseen" in info:
                print(f"coverage on evaluation text: {info['coverage_unseen']:.4f}")
        elif args.command == "pretrain":
            result = stage_pretrain(cfg, args.out, resume=args.resume, stop_after_phase=args.stop_after_phase)
            for path in result.checkpoints:
                print(f"checkpoint: {path}")
        else:
            report = stage_evaluate(cfg, args.out, args.predictor, args.checkpoint)
            print(report.to_table(), end="")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except (PipelineConfigError, TrainConfigError, TokenizerError, EvaluationError) as exc:
        print(f"uzbert: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineRuntimeError, CorpusError, CheckpointError, NonFiniteGradientError,
            PairSamplingError, OSError, ValueError) as exc:
        print(f"uzbert: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
