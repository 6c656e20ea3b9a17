"""Pipeline configuration and the four stages behind the command line.

Input paths in a config file are resolved relative to that file; everything
a stage writes goes under the output directory::

    OUT/corpus.txt             normalized, sentence-split corpus
    OUT/corpus_stats.json
    OUT/vocab.txt              one token per line, line number = id
    OUT/vocab.meta.json
    OUT/pretrain/checkpoints/  phase1-final, phase2-final, step-NNNNNNNN
    OUT/pretrain/metrics.jsonl
    OUT/report/report.json, OUT/report/report.txt
"""
from __future__ import annotations

import copy
import json
import logging
import os
import shutil
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from . import corpus as corpus_mod
from .evaluation import (
    AdversarialPredictor,
    CheckpointPredictor,
    EvalConfig,
    OraclePredictor,
    UniformPredictor,
    run_evaluation,
)
from .model import ModelConfig, load_checkpoint
from .tokenizer import NUM_SPECIAL, TokenizerConfig, Vocabulary, coverage, train_wordpiece
from .training import TrainConfig, describe_schedule, latest_checkpoint, pretrain

log = logging.getLogger(__name__)

CONFIG_DIR_ENV = "UZBERT_CONFIG_DIR"
PREDICTORS = ("checkpoint", "oracle", "adversarial", "uniform")
_TOP_KEYS = {"paths", "seed", "deterministic", "corpus", "tokenizer", "model", "train", "eval"}
_PATH_KEYS = {"raw", "abbreviations", "eval_datasets"}
_CORPUS_KEYS = {"validation_fraction"}


class PipelineConfigError(ValueError):
    pass


class PipelineRuntimeError(RuntimeError):
    pass


def bundled_config_dir() -> Path:
    return Path(str(resources.files("uzbert") / "configs"))


def find_config(name: str | Path) -> Path:
    """Resolve ``name`` as a path, then in $UZBERT_CONFIG_DIR, then in the bundled configs."""
    path = Path(name)
    if path.exists():
        return path
    candidates = []
    if os.environ.get(CONFIG_DIR_ENV):
        candidates.append(Path(os.environ[CONFIG_DIR_ENV]) / path)
    candidates.append(bundled_config_dir() / path)
    for c in candidates:
        if c.exists():
            return c
    raise PipelineConfigError(f"config {name} not found (looked in {[str(c) for c in [path, *candidates]]})")


@dataclass
class PipelineConfig:
    raw: Path | None
    abbreviations: Path | None
    eval_datasets: list[tuple[str, Path]]
    seed: int
    deterministic: bool
    validation_fraction: float
    tokenizer: TokenizerConfig
    model: dict
    train: TrainConfig
    eval: EvalConfig
    echo: dict = field(default_factory=dict)

    def model_config(self, vocab_size: int) -> ModelConfig:
        declared = self.model.get("vocab_size")
        if declared is not None and declared != vocab_size:
            raise PipelineConfigError(
                f"model vocab_size {declared} does not match the trained vocabulary ({vocab_size} tokens)"
            )
        return ModelConfig.from_dict({**self.model, "vocab_size": vocab_size})


def _require_keys(data, allowed: set[str], where: str) -> None:
    if not isinstance(data, dict):
        raise PipelineConfigError(f"{where}: expected a JSON object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise PipelineConfigError(f"{where}: unknown keys {unknown}; allowed: {sorted(allowed)}")


def parse_config(data: dict, base_dir: Path, seed: int | None = None,
                 deterministic: bool | None = None) -> PipelineConfig:
    """Validate a config mapping; ``seed``/``deterministic`` override the file."""
    _require_keys(data, _TOP_KEYS, "config")
    data = copy.deepcopy(data)
    if seed is not None:
        data["seed"] = seed
    if deterministic:
        data["deterministic"] = True
    paths = data.get("paths", {})
    _require_keys(paths, _PATH_KEYS, "paths")
    corpus_cfg = data.get("corpus", {})
    _require_keys(corpus_cfg, _CORPUS_KEYS, "corpus")

    def resolve(p):
        return None if p is None else (base_dir / p).resolve()

    try:
        global_seed = int(data.get("seed", 0))
        tok = TokenizerConfig(**_checked(data.get("tokenizer", {}), TokenizerConfig, "tokenizer"))
        model = dict(data.get("model", {}))
        ModelConfig.from_dict({**model, "vocab_size": model.get("vocab_size") or tok.vocab_size})
        train = TrainConfig.from_dict({**data.get("train", {}), "rng_seed": global_seed})
        ev = EvalConfig.from_dict({**data.get("eval", {}), "rng_seed": global_seed})
        split = corpus_mod.SplitSpec(corpus_cfg.get("validation_fraction", corpus_mod.DEFAULT_VALIDATION_FRACTION),
                                     global_seed)
    except (TypeError, ValueError) as exc:
        raise PipelineConfigError(str(exc)) from exc
    for i, phase in enumerate(train.phases, 1):
        limit = model.get("max_positions", ModelConfig().max_positions)
        if phase.sequence_length > limit:
            raise PipelineConfigError(f"train.phase{i}.sequence_length exceeds model.max_positions ({limit})")

    datasets = []
    for entry in paths.get("eval_datasets", []):
        _require_keys(entry, {"tag", "path"}, "paths.eval_datasets[]")
        datasets.append((entry["tag"], resolve(entry["path"])))

    echo = {k: data[k] for k in sorted(data)}
    echo["seed"] = global_seed
    echo["deterministic"] = bool(data.get("deterministic", False))
    return PipelineConfig(
        raw=resolve(paths.get("raw")), abbreviations=resolve(paths.get("abbreviations")),
        eval_datasets=datasets, seed=global_seed, deterministic=bool(data.get("deterministic", False)),
        validation_fraction=split.validation_fraction, tokenizer=tok, model=model,
        train=train, eval=ev, echo=echo,
    )


def _checked(section, cls, where):
    _require_keys(section, {f.name for f in fields(cls)}, where)
    return section


def load_config(name: str | Path, seed: int | None = None, deterministic: bool | None = None) -> PipelineConfig:
    path = find_config(name)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PipelineConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(data, path.parent, seed, deterministic)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _need(path: Path | None, what: str) -> Path:
    if path is None or not path.exists():
        raise PipelineConfigError(f"{what} not found: {path}")
    return path


# -- stages -----------------------------------------------------------------

def read_raw_input(raw: Path) -> list[tuple[str, bytes, str]]:
    """Raw documents: one per ``*.txt`` file of a directory, or the
    blank-line separated blocks of a single file (so a prepared corpus is
    itself valid input)."""
    if raw.is_dir():
        return corpus_mod.read_raw_documents(raw.glob("*.txt"))
    data = raw.read_bytes().replace(b"\r\n", b"\n").replace(b"\r", b"\n")
    blocks = [b for b in data.split(b"\n\n") if b.strip()]
    return [(f"{raw.name}:{i}", block, raw.stem) for i, block in enumerate(blocks)]


def stage_corpus_prepare(cfg: PipelineConfig, out: Path, raw: Path | None = None,
                         abbreviations: Path | None = None) -> corpus_mod.CorpusStats:
    raw = _need(raw or cfg.raw, "raw input")
    abbrev_path = abbreviations or cfg.abbreviations
    abbrevs = corpus_mod.load_abbreviations(_need(abbrev_path, "abbreviation file")) \
        if abbrev_path else corpus_mod.DEFAULT_ABBREVIATIONS
    docs, dropped = corpus_mod.normalize_documents(read_raw_input(raw))
    if not docs:
        raise PipelineRuntimeError(f"no documents survived normalization ({dropped} dropped)")
    stats = corpus_mod.corpus_stats(docs, dropped)
    sentence_docs = [corpus_mod.split_sentences(d, abbrevs) for d in docs]
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.write_corpus(sentence_docs, out / "corpus.txt")
    _write_json(out / "corpus_stats.json", {"stats": stats.as_dict(), "config": cfg.echo})
    return stats


def stage_tokenizer_train(cfg: PipelineConfig, out: Path, corpus_path: Path | None = None) -> dict:
    corpus_path = _need(corpus_path or out / "corpus.txt", "corpus file")
    docs = corpus_mod.read_corpus(corpus_path)
    vocab = train_wordpiece(corpus_mod.word_frequencies(docs), cfg.tokenizer)
    vocab.save(out / "vocab.txt")
    texts = [d.text for d in docs]
    info = {
        "requested_vocab_size": cfg.tokenizer.vocab_size,
        "full_scale_vocab_size": 30_000,
        "size": len(vocab),
        "coverage_train": coverage(texts, vocab, cfg.tokenizer.max_chars_per_word),
    }
    unseen = []
    for _, path in cfg.eval_datasets:
        if path.exists():
            unseen.extend(d.text for d in corpus_mod.read_corpus(path))
    if unseen:
        info["coverage_unseen"] = coverage([corpus_mod.normalize_text(t) for t in unseen], vocab,
                                           cfg.tokenizer.max_chars_per_word)
    _write_json(out / "vocab.meta.json", {**info, "tokenizer": asdict(cfg.tokenizer), "config": cfg.echo})
    return info


def split_for_training(cfg: PipelineConfig, corpus_path: Path):
    docs = corpus_mod.read_corpus(corpus_path)
    return corpus_mod.split_corpus(docs, corpus_mod.SplitSpec(cfg.validation_fraction, cfg.seed))


def stage_pretrain(cfg: PipelineConfig, out: Path, dry_run: bool = False, resume: bool = False,
                   stop_after_phase: int | None = None):
    if dry_run:
        return describe_schedule(cfg.train)
    corpus_path = _need(out / "corpus.txt", "corpus file")
    vocab = Vocabulary.load(_need(out / "vocab.txt", "vocabulary"), cfg.tokenizer.continuation_prefix)
    model_cfg = cfg.model_config(len(vocab))
    train_docs, val_docs = split_for_training(cfg, corpus_path)
    run_dir = out / "pretrain"
    if resume and latest_checkpoint(run_dir) is None:
        raise PipelineRuntimeError(f"--resume given but no checkpoint exists under {run_dir}")
    if not resume and run_dir.exists():
        # fresh run: stale checkpoints would be picked up by a later resume
        shutil.rmtree(run_dir)
    return pretrain(train_docs, vocab, model_cfg, cfg.train, run_dir, val_docs,
                    deterministic=cfg.deterministic, resume=resume, stop_after_phase=stop_after_phase,
                    max_chars_per_word=cfg.tokenizer.max_chars_per_word, config_echo=cfg.echo)


def default_checkpoint(out: Path) -> Path | None:
    final = out / "pretrain" / "checkpoints" / "phase2-final"
    if (final / "manifest.json").exists():
        return final
    return latest_checkpoint(out / "pretrain")


def stage_evaluate(cfg: PipelineConfig, out: Path, predictor: str = "checkpoint",
                   checkpoint: Path | None = None):
    if predictor not in PREDICTORS:
        raise PipelineConfigError(f"unknown predictor {predictor!r}")
    if not cfg.eval_datasets:
        raise PipelineConfigError("paths.eval_datasets is empty")
    datasets = []
    for tag, path in cfg.eval_datasets:
        docs = corpus_mod.read_corpus(_need(path, f"evaluation dataset {tag!r}"))
        datasets.append((tag, corpus_mod.normalize_text(" ".join(d.text for d in docs))))

    vocab_path = out / "vocab.txt"
    is_maskable = None
    extra = {"predictor_kind": predictor}
    if predictor == "checkpoint":
        ckpt = checkpoint or default_checkpoint(out)
        if ckpt is None or not Path(ckpt).exists():
            raise PipelineRuntimeError(f"checkpoint not found: {ckpt}")
        state, meta = load_checkpoint(ckpt)
        vocab = Vocabulary.load(_need(vocab_path, "vocabulary"), cfg.tokenizer.continuation_prefix)
        pred = CheckpointPredictor(state, vocab, "UzBERT", cfg.eval.maskable_policy,
                                   cfg.tokenizer.max_chars_per_word)
        is_maskable = pred.is_maskable
        extra["checkpoint"] = {"global_step": meta.get("global_step"), "phase": meta.get("phase")}
    elif predictor == "oracle":
        pred = OraclePredictor()
    elif predictor == "adversarial":
        pred = AdversarialPredictor()
    else:
        words = (Vocabulary.load(vocab_path, cfg.tokenizer.continuation_prefix).tokens[NUM_SPECIAL:] if vocab_path.exists()
                 else [w for _, text in datasets for w in text.split()])
        pred = UniformPredictor([w for w in words if not w.startswith(cfg.tokenizer.continuation_prefix)],
                                seed=cfg.seed)

    report = run_evaluation(datasets, [pred], cfg.eval, is_maskable)
    report.extra = {**extra, "effective_config": cfg.echo}
    report_dir = out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (report_dir / "report.txt").write_text(report.to_table(), encoding="utf-8")
    return report

