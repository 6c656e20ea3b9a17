"""Reference computations written independently of the package internals."""
import math

import numpy as np


def closed_form_parameter_count(layers, hidden, ffn, vocab, positions, segments):
    embeddings = (vocab + positions + segments) * hidden + 2 * hidden
    attention = 4 * (hidden * hidden + hidden) + 2 * hidden
    feed_forward = hidden * ffn + ffn + ffn * hidden + hidden + 2 * hidden
    mlm_head = hidden * hidden + hidden + 2 * hidden + vocab  # decoder weight is the embedding table
    nsp_head = hidden * hidden + hidden + 2 * hidden + 2
    return embeddings + layers * (attention + feed_forward) + mlm_head + nsp_head


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(loss_fn, params, grads, coords_per_tensor=20, step=1e-5, seed=0):
    """Central differences on sampled coordinates; returns {tensor: max relative error}."""
    rng = np.random.default_rng(seed)
    worst = {}
    for name, p in params.items():
        flat = p.reshape(-1)
        n = min(coords_per_tensor, flat.size)
        idx = rng.choice(flat.size, size=n, replace=False)
        errs = []
        for i in idx:
            keep = flat[i]
            flat[i] = keep + step
            up = loss_fn()
            flat[i] = keep - step
            down = loss_fn()
            flat[i] = keep
            errs.append(relative_error(float(grads[name].reshape(-1)[i]), (up - down) / (2 * step)))
        worst[name] = max(errs)
    return worst


def adam_scalar(grads, lrs, b1=0.9, b2=0.999, eps=1e-6, p0=0.0):
    """Plain-Python Adam iterates for one scalar; ``lrs[t-1]`` is the rate at step t."""
    p, m, v, out = p0, 0.0, 0.0, []
    for t, (g, lr) in enumerate(zip(grads, lrs), 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(p)
    return out


def brute_force_tokenize(word, pieces, prefix="##"):
    """Reference: at each position try every prefix, longest first."""
    out, pos = [], 0
    while pos < len(word):
        lengths = sorted(range(1, len(word) - pos + 1), reverse=True)
        match = None
        for n in lengths:
            cand = word[pos:pos + n]
            if pos:
                cand = prefix + cand
            if cand in pieces:
                match = cand
                break
        if match is None:
            return ["[UNK]"]
        out.append(match)
        pos += n
    return out


def random_tokenizer_instance(rng):
    """Small random piece set over a tiny alphabet plus a word to encode."""
    alphabet = "абвгд"[: rng.randint(1, 5)]
    pieces = set()
    for _ in range(rng.randint(1, 25)):
        n = rng.randint(1, 4)
        piece = "".join(rng.choice(alphabet) for _ in range(n))
        pieces.add(piece if rng.random() < 0.5 else "##" + piece)
    word = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12)))
    return sorted(pieces), word
