"""BERT encoder with MLM and NSP heads, forward and exact backward in numpy."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .layers import (
    dropout,
    dropout_backward,
    gelu,
    gelu_backward,
    layernorm,
    layernorm_backward,
    linear,
    linear_backward,
    log_softmax,
    softmax,
    softmax_backward,
)

IGNORE_INDEX = -100
# std of a unit normal truncated to [-2, 2]
_TRUNC_STD = 0.8796256610342398


class ModelError(ValueError):
    pass


class SequenceTooLongError(ModelError):
    pass


@dataclass
class Batch:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray
    mlm_labels: np.ndarray | None = None
    nsp_labels: np.ndarray | None = None

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.segment_ids = np.asarray(self.segment_ids, dtype=np.int64)
        self.attention_mask = np.asarray(self.attention_mask, dtype=np.int64)
        if self.mlm_labels is not None:
            self.mlm_labels = np.asarray(self.mlm_labels, dtype=np.int64)
        if self.nsp_labels is not None:
            self.nsp_labels = np.asarray(self.nsp_labels, dtype=np.int64)

    @property
    def shape(self) -> tuple[int, int]:
        return self.token_ids.shape

    def validate(self, config: ModelConfig) -> None:
        ids = self.token_ids
        if ids.ndim != 2:
            raise ModelError(f"token_ids must be 2-d, got shape {ids.shape}")
        for name in ("segment_ids", "attention_mask", "mlm_labels"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != ids.shape:
                raise ModelError(f"{name} shape {arr.shape} != token_ids shape {ids.shape}")
        if self.nsp_labels is not None and self.nsp_labels.shape != (ids.shape[0],):
            raise ModelError(f"nsp_labels must have shape ({ids.shape[0]},)")
        if ids.shape[1] > config.max_positions:
            raise SequenceTooLongError(
                f"sequence length {ids.shape[1]} exceeds max_positions {config.max_positions}"
            )
        if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
            raise ModelError("token id outside the vocabulary")
        if self.segment_ids.size and (
            self.segment_ids.min() < 0 or self.segment_ids.max() >= config.segment_types
        ):
            raise ModelError("segment id outside [0, segment_types)")
        if ids.size and not self.attention_mask.any(axis=1).all():
            raise ModelError("every sequence needs at least one attended position")
        if self.mlm_labels is not None:
            pad = self.attention_mask == 0
            if np.any(self.mlm_labels[pad] != IGNORE_INDEX):
                raise ModelError("padded positions must carry the ignore label")


@dataclass
class EncoderState:
    config: ModelConfig
    params: dict[str, np.ndarray]

    @property
    def dtype(self):
        return self.params["embeddings.word"].dtype

    def copy(self) -> "EncoderState":
        return EncoderState(self.config, {k: v.copy() for k, v in self.params.items()})

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable tensor, in canonical order."""
    H, F, V = config.hidden_size, config.ffn_size, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.word": (V, H),
        "embeddings.position": (config.max_positions, H),
        "embeddings.segment": (config.segment_types, H),
        "embeddings.ln.gamma": (H,),
        "embeddings.ln.beta": (H,),
    }
    for i in range(config.num_layers):
        pre = f"layer.{i}."
        for proj in ("query", "key", "value", "output"):
            shapes[f"{pre}attention.{proj}.weight"] = (H, H)
            shapes[f"{pre}attention.{proj}.bias"] = (H,)
        shapes[f"{pre}attention.ln.gamma"] = (H,)
        shapes[f"{pre}attention.ln.beta"] = (H,)
        shapes[f"{pre}ffn.in.weight"] = (H, F)
        shapes[f"{pre}ffn.in.bias"] = (F,)
        shapes[f"{pre}ffn.out.weight"] = (F, H)
        shapes[f"{pre}ffn.out.bias"] = (H,)
        shapes[f"{pre}ffn.ln.gamma"] = (H,)
        shapes[f"{pre}ffn.ln.beta"] = (H,)
    shapes.update({
        "mlm.transform.weight": (H, H),
        "mlm.transform.bias": (H,),
        "mlm.ln.gamma": (H,),
        "mlm.ln.beta": (H,),
        "mlm.bias": (V,),
        "pooler.weight": (H, H),
        "pooler.bias": (H,),
        "nsp.weight": (H, 2),
        "nsp.bias": (2,),
    })
    return shapes


def count_parameters(config: ModelConfig) -> int:
    """Scalar count of the encoder and both heads; the MLM decoder is tied."""
    return sum(math.prod(shape) for shape in parameter_shapes(config).values())


def is_no_decay(name: str) -> bool:
    return name.endswith(("bias", ".gamma", ".beta"))


def _truncated_normal(rng: np.random.Generator, shape, stddev: float) -> np.ndarray:
    # Underlying scale is widened so the truncated sample has std == stddev.
    scale = stddev / _TRUNC_STD
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * scale


def init_model(config: ModelConfig, rng_seed: int = 0, dtype=np.float32) -> EncoderState:
    rng = np.random.default_rng(rng_seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gamma"):
            arr = np.ones(shape)
        elif name.endswith("bias") or name.endswith(".beta"):
            arr = np.zeros(shape)
        else:
            arr = _truncated_normal(rng, shape, config.initializer_stddev)
        params[name] = arr.astype(dtype)
    return EncoderState(config, params)


# -- forward ----------------------------------------------------------------

@dataclass
class ForwardOutput:
    mlm_logits: np.ndarray
    nsp_logits: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def attention_probs(self) -> list[np.ndarray]:
        return [c["attn"]["probs"] for c in self.cache["layers"]]


def _split_heads(t, num_heads):
    B, T, H = t.shape
    return t.reshape(B, T, num_heads, H // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(t):
    B, nh, T, dh = t.shape
    return t.transpose(0, 2, 1, 3).reshape(B, T, nh * dh)


def _attention_forward(p, pre, h, keymask, cfg, rng):
    rate = cfg.dropout_rate
    q = _split_heads(linear(h, p[pre + "query.weight"], p[pre + "query.bias"]), cfg.num_heads)
    k = _split_heads(linear(h, p[pre + "key.weight"], p[pre + "key.bias"]), cfg.num_heads)
    v = _split_heads(linear(h, p[pre + "value.weight"], p[pre + "value.bias"]), cfg.num_heads)
    scale = 1.0 / math.sqrt(cfg.head_size)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores = np.where(keymask, scores, -np.inf)
    probs = softmax(scores)
    probs_d, probs_mask = dropout(probs, rate, rng)
    ctx = _merge_heads(probs_d @ v)
    out = linear(ctx, p[pre + "output.weight"], p[pre + "output.bias"])
    out, out_mask = dropout(out, rate, rng)
    y, ln = layernorm(h + out, p[pre + "ln.gamma"], p[pre + "ln.beta"])
    cache = dict(h=h, q=q, k=k, v=v, scale=scale, probs=probs, probs_d=probs_d,
                 probs_mask=probs_mask, ctx=ctx, out_mask=out_mask, ln=ln)
    return y, cache


def _attention_backward(p, pre, dy, c, cfg, grads):
    dsum, grads[pre + "ln.gamma"], grads[pre + "ln.beta"] = layernorm_backward(dy, c["ln"])
    dout = dropout_backward(dsum, c["out_mask"])
    dctx, grads[pre + "output.weight"], grads[pre + "output.bias"] = linear_backward(
        dout, c["ctx"], p[pre + "output.weight"]
    )
    dctx = _split_heads(dctx, cfg.num_heads)
    dprobs_d = dctx @ c["v"].transpose(0, 1, 3, 2)
    dv = c["probs_d"].transpose(0, 1, 3, 2) @ dctx
    dprobs = dropout_backward(dprobs_d, c["probs_mask"])
    dscores = softmax_backward(dprobs, c["probs"]) * c["scale"]
    dq = dscores @ c["k"]
    dk = dscores.transpose(0, 1, 3, 2) @ c["q"]
    dh = dsum
    for proj, d in (("query", dq), ("key", dk), ("value", dv)):
        dx, grads[f"{pre}{proj}.weight"], grads[f"{pre}{proj}.bias"] = linear_backward(
            _merge_heads(d), c["h"], p[f"{pre}{proj}.weight"]
        )
        dh = dh + dx
    return dh


def _ffn_forward(p, pre, h, cfg, rng):
    pre_act = linear(h, p[pre + "in.weight"], p[pre + "in.bias"])
    act = gelu(pre_act)
    out = linear(act, p[pre + "out.weight"], p[pre + "out.bias"])
    out, out_mask = dropout(out, cfg.dropout_rate, rng)
    y, ln = layernorm(h + out, p[pre + "ln.gamma"], p[pre + "ln.beta"])
    return y, dict(h=h, pre_act=pre_act, act=act, out_mask=out_mask, ln=ln)


def _ffn_backward(p, pre, dy, c, grads):
    dsum, grads[pre + "ln.gamma"], grads[pre + "ln.beta"] = layernorm_backward(dy, c["ln"])
    dout = dropout_backward(dsum, c["out_mask"])
    dact, grads[pre + "out.weight"], grads[pre + "out.bias"] = linear_backward(
        dout, c["act"], p[pre + "out.weight"]
    )
    dpre = gelu_backward(dact, c["pre_act"])
    dx, grads[pre + "in.weight"], grads[pre + "in.bias"] = linear_backward(
        dpre, c["h"], p[pre + "in.weight"]
    )
    return dsum + dx


def forward(state: EncoderState, batch: Batch, mode: str = "eval",
            rng: np.random.Generator | None = None) -> ForwardOutput:
    """Run the encoder and both heads.

    In ``"train"`` mode dropout masks are drawn from ``rng``; ``"eval"``
    mode is deterministic and ignores ``rng``.
    """
    if mode not in ("train", "eval"):
        raise ModelError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg, p = state.config, state.params
    batch.validate(cfg)
    if mode == "train" and cfg.dropout_rate > 0 and rng is None:
        raise ModelError("train mode with dropout needs an rng")
    drop_rng = rng if mode == "train" else None

    ids, seg = batch.token_ids, batch.segment_ids
    T = ids.shape[1]
    x = p["embeddings.word"][ids] + p["embeddings.position"][:T] + p["embeddings.segment"][seg]
    h, emb_ln = layernorm(x, p["embeddings.ln.gamma"], p["embeddings.ln.beta"])
    h, emb_mask = dropout(h, cfg.dropout_rate, drop_rng)

    keymask = batch.attention_mask[:, None, None, :].astype(bool)
    layers = []
    for i in range(cfg.num_layers):
        h, attn = _attention_forward(p, f"layer.{i}.attention.", h, keymask, cfg, drop_rng)
        h, ffn = _ffn_forward(p, f"layer.{i}.ffn.", h, cfg, drop_rng)
        layers.append({"attn": attn, "ffn": ffn})

    t_pre = linear(h, p["mlm.transform.weight"], p["mlm.transform.bias"])
    t_act = gelu(t_pre)
    t, mlm_ln = layernorm(t_act, p["mlm.ln.gamma"], p["mlm.ln.beta"])
    mlm_logits = t @ p["embeddings.word"].T + p["mlm.bias"]

    pooled = np.tanh(linear(h[:, 0], p["pooler.weight"], p["pooler.bias"]))
    nsp_logits = linear(pooled, p["nsp.weight"], p["nsp.bias"])

    cache = dict(batch=batch, emb_ln=emb_ln, emb_mask=emb_mask, layers=layers, h=h,
                 t_pre=t_pre, t=t, mlm_ln=mlm_ln, pooled=pooled)
    return ForwardOutput(mlm_logits, nsp_logits, cache)


# -- loss and backward ------------------------------------------------------

class LossError(ModelError):
    pass


@dataclass
class LossResult:
    total: float
    mlm_loss: float
    nsp_loss: float
    mlm_correct: int
    mlm_count: int
    nsp_correct: int
    nsp_count: int
    d_mlm_logits: np.ndarray = field(repr=False)
    d_nsp_logits: np.ndarray = field(repr=False)


def compute_loss(mlm_logits: np.ndarray, nsp_logits: np.ndarray, batch: Batch) -> LossResult:
    """Mean MLM cross-entropy over labelled positions plus mean NSP cross-entropy."""
    d_mlm = np.zeros_like(mlm_logits)
    d_nsp = np.zeros_like(nsp_logits)
    mlm_loss = nsp_loss = 0.0
    mlm_correct = nsp_correct = 0

    labels = batch.mlm_labels
    sel = (labels != IGNORE_INDEX) if labels is not None else np.zeros(batch.shape, bool)
    n_mlm = int(sel.sum())
    has_nsp = batch.nsp_labels is not None and batch.nsp_labels.size > 0
    if n_mlm == 0 and not has_nsp:
        raise LossError("batch has no MLM labels and no NSP labels")

    if n_mlm:
        logits = mlm_logits[sel]
        gold = labels[sel]
        lsm = log_softmax(logits)
        rows = np.arange(n_mlm)
        mlm_loss = float(-lsm[rows, gold].mean())
        grad = np.exp(lsm)
        grad[rows, gold] -= 1.0
        d_mlm[sel] = grad / n_mlm
        mlm_correct = int((logits.argmax(axis=-1) == gold).sum())

    if has_nsp:
        gold = batch.nsp_labels
        n = gold.shape[0]
        lsm = log_softmax(nsp_logits)
        rows = np.arange(n)
        nsp_loss = float(-lsm[rows, gold].mean())
        grad = np.exp(lsm)
        grad[rows, gold] -= 1.0
        d_nsp = grad / n
        nsp_correct = int((nsp_logits.argmax(axis=-1) == gold).sum())

    return LossResult(
        total=mlm_loss + nsp_loss, mlm_loss=mlm_loss, nsp_loss=nsp_loss,
        mlm_correct=mlm_correct, mlm_count=n_mlm,
        nsp_correct=nsp_correct, nsp_count=int(batch.nsp_labels.size) if has_nsp else 0,
        d_mlm_logits=d_mlm.astype(mlm_logits.dtype, copy=False),
        d_nsp_logits=d_nsp.astype(nsp_logits.dtype, copy=False),
    )


def backward(state: EncoderState, output: ForwardOutput, loss: LossResult) -> dict[str, np.ndarray]:
    """Gradients of ``loss.total`` for every parameter, keyed like ``state.params``."""
    cfg, p, c = state.config, state.params, output.cache
    grads: dict[str, np.ndarray] = {}
    h = c["h"]
    B, T, H = h.shape
    dh = np.zeros_like(h)

    # MLM head: only rows with a non-zero logit gradient contribute.
    d_logits = loss.d_mlm_logits.reshape(B * T, -1)
    rows = np.flatnonzero(np.any(d_logits != 0, axis=1))
    d_logits = d_logits[rows]
    t = c["t"].reshape(B * T, H)[rows]
    grads["mlm.bias"] = d_logits.sum(axis=0)
    d_word = (d_logits.T @ t).astype(h.dtype, copy=False)
    dt = d_logits @ p["embeddings.word"]
    xhat, inv, gamma = c["mlm_ln"]
    ln_rows = (xhat.reshape(B * T, H)[rows], inv.reshape(B * T, 1)[rows], gamma)
    dt_act, grads["mlm.ln.gamma"], grads["mlm.ln.beta"] = layernorm_backward(dt, ln_rows)
    t_pre = c["t_pre"].reshape(B * T, H)[rows]
    dt_pre = gelu_backward(dt_act, t_pre)
    h_rows = h.reshape(B * T, H)[rows]
    dh_rows, grads["mlm.transform.weight"], grads["mlm.transform.bias"] = linear_backward(
        dt_pre, h_rows, p["mlm.transform.weight"]
    )
    dh.reshape(B * T, H)[rows] += dh_rows

    # NSP head on the first position.
    pooled = c["pooled"]
    dpooled, grads["nsp.weight"], grads["nsp.bias"] = linear_backward(
        loss.d_nsp_logits, pooled, p["nsp.weight"]
    )
    dpool_pre = dpooled * (1.0 - pooled**2)
    dh0, grads["pooler.weight"], grads["pooler.bias"] = linear_backward(
        dpool_pre, h[:, 0], p["pooler.weight"]
    )
    dh[:, 0] += dh0

    for i in reversed(range(cfg.num_layers)):
        lc = c["layers"][i]
        dh = _ffn_backward(p, f"layer.{i}.ffn.", dh, lc["ffn"], grads)
        dh = _attention_backward(p, f"layer.{i}.attention.", dh, lc["attn"], cfg, grads)

    dh = dropout_backward(dh, c["emb_mask"])
    dx, grads["embeddings.ln.gamma"], grads["embeddings.ln.beta"] = layernorm_backward(dh, c["emb_ln"])
    batch = c["batch"]
    np.add.at(d_word, batch.token_ids.reshape(-1), dx.reshape(-1, H))
    grads["embeddings.word"] = d_word
    d_pos = np.zeros_like(p["embeddings.position"])
    d_pos[:T] = dx.sum(axis=0)
    grads["embeddings.position"] = d_pos
    d_seg = np.zeros_like(p["embeddings.segment"])
    np.add.at(d_seg, batch.segment_ids.reshape(-1), dx.reshape(-1, H))
    grads["embeddings.segment"] = d_seg
    return {name: grads[name] for name in p}


def loss_and_grads(state: EncoderState, batch: Batch, mode: str = "train",
                   rng: np.random.Generator | None = None):
    out = forward(state, batch, mode, rng)
    loss = compute_loss(out.mlm_logits, out.nsp_logits, batch)
    return loss, backward(state, out, loss)
