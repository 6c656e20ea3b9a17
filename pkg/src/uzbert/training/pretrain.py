"""Two-phase MLM + NSP pretraining loop with checkpointing and resume.

Every random draw (pair sampling, batch order, masking, dropout) comes from
a generator seeded by ``(seed, phase, epoch, batch, stream)``, so a run can
stop after any step and resume to the same bytes.
"""
from __future__ import annotations

import contextlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ..corpus import SentenceDocument
from ..model import (
    EncoderState,
    ModelConfig,
    compute_loss,
    forward,
    init_model,
    load_checkpoint,
    loss_and_grads,
    save_checkpoint,
)
from ..model.checkpoint import load_optimizer, read_manifest
from ..tokenizer import Vocabulary
from .config import PhaseConfig, TrainConfig, TrainConfigError
from .data import PairInstance, build_batch, make_pair_instances, tokenize_documents
from .optim import NonFiniteGradientError, OptimizerState, learning_rate, optimizer_step

log = logging.getLogger(__name__)

# rng stream ids
_PAIRS, _ORDER, _MASKING, _DROPOUT, _EVAL = range(5)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


@dataclass
class PretrainResult:
    state: EncoderState
    checkpoints: list[Path] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)
    rejected_steps: int = 0
    skipped_pairs: int = 0
    finished: bool = False


def steps_per_epoch(n_instances: int, phase: PhaseConfig) -> int:
    return math.ceil(n_instances / phase.batch_size) if n_instances else 0


def describe_schedule(train_config: TrainConfig) -> list[str]:
    return [
        f"phase {i}: {p.epochs} epochs @ batch {p.batch_size} x sequence {p.sequence_length}"
        for i, p in enumerate(train_config.phases, 1)
    ]


def validate_setup(vocab: Vocabulary, model_config: ModelConfig, train_config: TrainConfig) -> None:
    if len(vocab) != model_config.vocab_size:
        raise TrainConfigError(
            f"vocabulary has {len(vocab)} tokens but model vocab_size is {model_config.vocab_size}"
        )
    for i, phase in enumerate(train_config.phases, 1):
        if phase.sequence_length > model_config.max_positions:
            raise TrainConfigError(
                f"phase {i} sequence_length {phase.sequence_length} exceeds "
                f"max_positions {model_config.max_positions}"
            )


def evaluate_pairs(state: EncoderState, instances: Sequence[PairInstance], phase: PhaseConfig,
                   train_config: TrainConfig, key: tuple[int, ...]) -> dict:
    """Eval-mode MLM/NSP loss and accuracy; parameters are left untouched."""
    totals = dict(mlm_loss=0.0, nsp_loss=0.0, mlm_correct=0, mlm_count=0, nsp_correct=0, nsp_count=0)
    batches = 0
    V = state.config.vocab_size
    for bi in range(steps_per_epoch(len(instances), phase)):
        pairs = instances[bi * phase.batch_size:(bi + 1) * phase.batch_size]
        batch, _ = build_batch(pairs, phase.sequence_length, train_config.masking, V, _rng(*key, bi))
        if batch is None:
            continue
        out = forward(state, batch, "eval")
        loss = compute_loss(out.mlm_logits, out.nsp_logits, batch)
        batches += 1
        totals["mlm_loss"] += loss.mlm_loss * loss.mlm_count
        totals["nsp_loss"] += loss.nsp_loss * loss.nsp_count
        for k in ("mlm_correct", "mlm_count", "nsp_correct", "nsp_count"):
            totals[k] += getattr(loss, k)
    mc, nc = max(totals["mlm_count"], 1), max(totals["nsp_count"], 1)
    return {
        "mlm_loss": totals["mlm_loss"] / mc,
        "nsp_loss": totals["nsp_loss"] / nc,
        "mlm_accuracy": totals["mlm_correct"] / mc,
        "nsp_accuracy": totals["nsp_correct"] / nc,
        "mlm_count": totals["mlm_count"],
        "nsp_count": totals["nsp_count"],
    }


def build_phase_instances(docs, vocab: Vocabulary, train_config: TrainConfig,
                          max_chars_per_word: int = 100, salt: int = 0) -> list[list[PairInstance]]:
    tokenized = tokenize_documents(docs, vocab, max_chars_per_word)
    return [
        make_pair_instances(tokenized, phase.sequence_length, train_config.nsp_positive_rate,
                            _rng(train_config.rng_seed, i, _PAIRS, salt))
        for i, phase in enumerate(train_config.phases, 1)
    ]


def latest_checkpoint(out_dir: str | Path) -> Path | None:
    root = Path(out_dir) / "checkpoints"
    if not root.is_dir():
        return None
    best, best_key = None, None
    for ckpt in sorted(root.iterdir()):
        if not (ckpt / "manifest.json").exists():
            continue
        meta = read_manifest(ckpt)["metadata"]
        key = (meta["global_step"], meta["position"])
        if best_key is None or key > best_key:
            best, best_key = ckpt, key
    return best


class _MetricsLog:
    def __init__(self, path: Path | None, sink: list[dict]):
        self.path = path
        self.sink = sink
        self.t0 = time.perf_counter()

    def write(self, record: dict) -> None:
        record = {**record, "wall_time": round(time.perf_counter() - self.t0, 6)}
        self.sink.append(record)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")


def pretrain(
    train_docs: Sequence[SentenceDocument],
    vocab: Vocabulary,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path,
    validation_docs: Sequence[SentenceDocument] = (),
    *,
    deterministic: bool = True,
    resume: bool = False,
    stop_after_phase: int | None = None,
    stop_after_steps: int | None = None,
    max_chars_per_word: int = 100,
    config_echo: dict | None = None,
) -> PretrainResult:
    """Run phase 1 then phase 2, checkpointing at every phase boundary.

    Phase 2 starts from the phase-1 parameters; Adam moments are reset at
    the boundary while the learning-rate schedule runs across both phases.
    """
    validate_setup(vocab, model_config, train_config)
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    limits = threadpool_limits(limits=1) if deterministic else contextlib.nullcontext()
    with limits:
        return _run(train_docs, validation_docs, vocab, model_config, train_config, out_dir,
                    deterministic, resume, stop_after_phase, stop_after_steps,
                    max_chars_per_word, config_echo)


def _run(train_docs, validation_docs, vocab, model_config, cfg, out_dir, deterministic, resume,
         stop_after_phase, stop_after_steps, max_chars_per_word, config_echo) -> PretrainResult:
    seed = cfg.rng_seed
    instances = build_phase_instances(train_docs, vocab, cfg, max_chars_per_word)
    val_instances = (build_phase_instances(validation_docs, vocab, cfg, max_chars_per_word, salt=1)
                     if _can_pair(validation_docs, cfg) else [[], []])
    per_phase = [steps_per_epoch(len(inst), p) for inst, p in zip(instances, cfg.phases)]
    total_steps = sum(n * p.epochs for n, p in zip(per_phase, cfg.phases))

    position = (1, 0, 0)
    global_step = 0
    state = init_model(model_config, seed)
    opt = OptimizerState.zeros_like(state)
    if resume:
        ckpt = latest_checkpoint(out_dir)
        if ckpt is None:
            raise FileNotFoundError(f"nothing to resume from in {out_dir / 'checkpoints'}")
        state, meta = load_checkpoint(ckpt)
        if state.config != model_config:
            raise TrainConfigError(f"checkpoint {ckpt} was written for a different model config")
        saved = load_optimizer(ckpt)
        if saved is not None:
            opt = OptimizerState.from_dict(saved)
        position = tuple(meta["position"])
        global_step = meta["global_step"]
        log.info("resuming from %s at phase/epoch/batch %s", ckpt, position)

    result = PretrainResult(state)
    metrics = _MetricsLog(out_dir / "metrics.jsonl", result.metrics)
    V = model_config.vocab_size

    def checkpoint(name: str, pos: tuple[int, int, int]) -> None:
        meta = {
            "position": list(pos),
            "global_step": global_step,
            "phase": pos[0] if pos[0] <= 2 else 2,
            "completed_epochs": pos[1],
            "total_steps": total_steps,
            "rng": {"scheme": "numpy-seedsequence(seed, phase, epoch, batch, stream)", "seed": seed},
            "deterministic": deterministic,
            "train_config": cfg.to_dict(),
            "config": config_echo or {},
        }
        path = save_checkpoint(state, meta, out_dir / "checkpoints" / name, opt.to_dict())
        result.checkpoints.append(path)

    for ph in (1, 2):
        if ph < position[0]:
            continue
        phase = cfg.phases[ph - 1]
        inst = instances[ph - 1]
        nb = per_phase[ph - 1]
        start_epoch, start_batch = (position[1], position[2]) if ph == position[0] else (0, 0)
        if ph == 2 and start_epoch == 0 and start_batch == 0:
            opt.reset_moments()
        for epoch in range(start_epoch, phase.epochs):
            order = _rng(seed, ph, epoch, _ORDER).permutation(len(inst))
            sums = np.zeros(4)
            for bi in range(start_batch if epoch == start_epoch else 0, nb):
                pairs = [inst[j] for j in order[bi * phase.batch_size:(bi + 1) * phase.batch_size]]
                batch, skipped = build_batch(pairs, phase.sequence_length, cfg.masking, V,
                                             _rng(seed, ph, epoch, bi, _MASKING))
                result.skipped_pairs += skipped
                global_step += 1
                if batch is not None:
                    loss, grads = loss_and_grads(state, batch, "train", _rng(seed, ph, epoch, bi, _DROPOUT))
                    try:
                        lr, _ = optimizer_step(state, grads, opt, cfg, total_steps)
                    except NonFiniteGradientError as exc:
                        result.rejected_steps += 1
                        log.warning("step %d rejected: %s", global_step, exc)
                        lr = float("nan")
                    sums += (loss.mlm_loss * loss.mlm_count, loss.mlm_count,
                             loss.nsp_loss * loss.nsp_count, loss.nsp_count)
                    metrics.write({"kind": "step", "step": global_step, "phase": ph, "epoch": epoch,
                                   "mlm_loss": loss.mlm_loss, "nsp_loss": loss.nsp_loss, "lr": lr})
                nxt = (ph, epoch, bi + 1) if bi + 1 < nb else (ph, epoch + 1, 0)
                if cfg.checkpoint_every_n_steps and global_step % cfg.checkpoint_every_n_steps == 0:
                    checkpoint(f"step-{global_step:08d}", nxt)
                if stop_after_steps is not None and global_step >= stop_after_steps:
                    if not cfg.checkpoint_every_n_steps or global_step % cfg.checkpoint_every_n_steps:
                        checkpoint(f"step-{global_step:08d}", nxt)
                    return result

            record = {"kind": "epoch", "step": global_step, "phase": ph, "epoch": epoch,
                      "mlm_loss": sums[0] / max(sums[1], 1), "nsp_loss": sums[2] / max(sums[3], 1),
                      "lr": learning_rate(opt.step, cfg.learning_rate, cfg.warmup_steps, total_steps)}
            if val_instances[ph - 1]:
                val = evaluate_pairs(state, val_instances[ph - 1], phase, cfg, (seed, ph, _EVAL))
                record.update({f"val_{k}": v for k, v in val.items()})
            metrics.write(record)
            log.info("phase %d epoch %d: mlm %.4f nsp %.4f", ph, epoch, record["mlm_loss"], record["nsp_loss"])

        checkpoint(f"phase{ph}-final", (ph + 1, 0, 0))
        if stop_after_phase == ph:
            return result
    result.finished = True
    return result


def _can_pair(docs, cfg: TrainConfig) -> bool:
    if not docs:
        return False
    multi = sum(1 for d in docs if len(d.sentences) >= 2)
    if cfg.nsp_positive_rate > 0 and not multi:
        return False
    return cfg.nsp_positive_rate >= 1 or len(docs) >= 2
