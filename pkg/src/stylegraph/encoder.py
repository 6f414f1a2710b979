"""Hierarchical attention encoder: word-level Bi-LSTM + attention per review,
then review-level Bi-LSTM + attention across the reviews of one item.

Batches are padded and masked.  A masked step carries the previous LSTM state
forward and masked positions get zero attention, so a padded batch produces
exactly what running every review and item on its own would.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import PAD_INDEX, Sample, Vocabulary


@dataclass
class EncoderConfig:
    vocab_size: int
    emb_dim: int = 128
    hidden: int = 128
    attn_dim: int = 128
    attention: bool = True  # False: last-state pooling (the plain two-level LSTM baseline)
    max_reviews: int = 40
    max_words: int = 32
    init_scale: float = 0.08
    forget_bias: float = 1.0

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden


@dataclass
class MusicRepresentation:
    z: Tensor
    word_attention: list[np.ndarray]
    review_attention: np.ndarray | None


@dataclass
class BatchEncoding:
    z: Tensor  # (batch, 2 * hidden)
    word_attention: list[list[np.ndarray]]
    review_attention: list[np.ndarray | None]


def _uniform(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def _lstm_params(prefix: str, d_in: int, cfg: EncoderConfig, rng) -> dict[str, Tensor]:
    h = cfg.hidden
    b = np.zeros(4 * h)
    b[h : 2 * h] = cfg.forget_bias  # gate layout: input, forget, output, candidate
    return {
        f"{prefix}.Wx": Tensor(_uniform(rng, (d_in, 4 * h), cfg.init_scale), requires_grad=True),
        f"{prefix}.Wh": Tensor(_uniform(rng, (h, 4 * h), cfg.init_scale), requires_grad=True),
        f"{prefix}.b": Tensor(b, requires_grad=True),
    }


def _attention_params(prefix: str, d_in: int, cfg: EncoderConfig, rng) -> dict[str, Tensor]:
    return {
        f"{prefix}.W": Tensor(_uniform(rng, (d_in, cfg.attn_dim), cfg.init_scale), requires_grad=True),
        f"{prefix}.b": Tensor(np.zeros(cfg.attn_dim), requires_grad=True),
        f"{prefix}.ctx": Tensor(_uniform(rng, (cfg.attn_dim,), cfg.init_scale), requires_grad=True),
    }


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params = {"embedding": Tensor(_uniform(rng, (cfg.vocab_size, cfg.emb_dim), cfg.init_scale), requires_grad=True)}
    two_h = 2 * cfg.hidden
    params.update(_lstm_params("word.fw", cfg.emb_dim, cfg, rng))
    params.update(_lstm_params("word.bw", cfg.emb_dim, cfg, rng))
    if cfg.attention:
        params.update(_attention_params("word.attn", two_h, cfg, rng))
    params.update(_lstm_params("review.fw", two_h, cfg, rng))
    params.update(_lstm_params("review.bw", two_h, cfg, rng))
    if cfg.attention:
        params.update(_attention_params("review.attn", two_h, cfg, rng))
    for name, p in params.items():
        p.name = name
    return params


def _sig(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm(x: Tensor, mask: np.ndarray, params: dict[str, Tensor], prefix: str) -> tuple[Tensor, Tensor]:
    """Unidirectional LSTM over ``x`` (rows, steps, d_in) as one tape operation.

    Returns per-step hidden states (rows, steps, hidden) and the final state,
    which for each row is the state at its last unmasked step.  A masked step
    carries ``h`` and ``c`` forward unchanged.
    """
    wx, wh, b = params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.b"]
    rows, steps, d_in = x.shape
    hid = wh.shape[0]
    m = np.asarray(mask, dtype=np.float64)[:, :, None]
    xw = x.data @ wx.data + b.data
    h = np.zeros((rows, hid))
    c = np.zeros((rows, hid))
    states = np.empty((rows, steps, hid))
    cache = []
    for t in range(steps):
        a = xw[:, t] + h @ wh.data
        sig = _sig(a[:, : 3 * hid])
        i, f, o = sig[:, :hid], sig[:, hid : 2 * hid], sig[:, 2 * hid :]
        g = np.tanh(a[:, 3 * hid :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        mt = m[:, t]
        cache.append((i, f, o, g, c, tc, h))
        c = mt * c_new + (1.0 - mt) * c
        h = mt * h_new + (1.0 - mt) * h
        states[:, t] = h

    def bw(grad):
        dxw = np.empty((rows, steps, 4 * hid))
        dwh = np.zeros_like(wh.data)
        dh_carry = np.zeros((rows, hid))
        dc_carry = np.zeros((rows, hid))
        for t in range(steps - 1, -1, -1):
            i, f, o, g, c_prev, tc, h_prev = cache[t]
            mt = m[:, t]
            dh = grad[:, t] + dh_carry
            dh_new = mt * dh
            dc_new = mt * dc_carry + dh_new * o * (1.0 - tc * tc)
            da = dxw[:, t]
            da[:, :hid] = dc_new * g * i * (1.0 - i)
            da[:, hid : 2 * hid] = dc_new * c_prev * f * (1.0 - f)
            da[:, 2 * hid : 3 * hid] = dh_new * tc * o * (1.0 - o)
            da[:, 3 * hid :] = dc_new * i * (1.0 - g * g)
            dwh += h_prev.T @ da
            dh_carry = da @ wh.data.T + (1.0 - mt) * dh
            dc_carry = dc_new * f + (1.0 - mt) * dc_carry
        flat = dxw.reshape(-1, 4 * hid)
        dx = (dxw @ wx.data.T) if x.requires_grad else None
        dwx = x.data.reshape(-1, d_in).T @ flat
        return dx, dwx, dwh, flat.sum(axis=0)

    out = ag._make(states, (x, wx, wh, b), bw)
    return out, out[:, steps - 1, :]


def lstm_unfused(x: Tensor, mask: np.ndarray, params: dict[str, Tensor], prefix: str) -> tuple[Tensor, Tensor]:
    """Same recurrence as :func:`lstm`, composed from elementary tape operations."""
    wx, wh, b = params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.b"]
    rows, steps, _ = x.shape
    hid = wh.shape[0]
    xw = ag.add(ag.matmul(x, wx), b)
    h = Tensor(np.zeros((rows, hid)))
    c = Tensor(np.zeros((rows, hid)))
    outs = []
    for t in range(steps):
        gates = ag.add(xw[:, t, :], ag.matmul(h, wh))
        sig = ag.sigmoid(gates[:, : 3 * hid])
        cand = ag.tanh(gates[:, 3 * hid :])
        i, f, o = sig[:, :hid], sig[:, hid : 2 * hid], sig[:, 2 * hid :]
        c_new = ag.add(ag.mul(f, c), ag.mul(i, cand))
        h_new = ag.mul(o, ag.tanh(c_new))
        mt = np.asarray(mask, dtype=np.float64)[:, t : t + 1]
        keep = 1.0 - mt
        c = ag.add(ag.mul(c_new, mt), ag.mul(c, keep))
        h = ag.add(ag.mul(h_new, mt), ag.mul(h, keep))
        outs.append(h)
    return ag.stack(outs, axis=1), h


def _reverse_index(lengths: np.ndarray, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Index pair reversing each row's valid prefix; padding stays in place."""
    t = np.arange(steps)[None, :]
    lens = lengths[:, None]
    idx = np.where(t < lens, lens - 1 - t, t)
    rows = np.broadcast_to(np.arange(len(lengths))[:, None], idx.shape)
    return rows, idx


def bilstm(x: Tensor, mask: np.ndarray, params, prefix: str, cell=None) -> tuple[Tensor, Tensor]:
    """Bidirectional LSTM; returns (rows, steps, 2*hidden) states and the pooled final states."""
    cell = cell or lstm
    lengths = mask.sum(axis=1).astype(np.int64)
    steps = x.shape[1]
    fw_states, fw_last = cell(x, mask, params, f"{prefix}.fw")
    rows, rev = _reverse_index(lengths, steps)
    bw_rev, bw_last = cell(x[rows, rev], mask, params, f"{prefix}.bw")
    bw_states = bw_rev[rows, rev]
    return ag.concat([fw_states, bw_states], axis=-1), ag.concat([fw_last, bw_last], axis=-1)


def attend(states: Tensor, mask: np.ndarray, params, prefix: str) -> tuple[Tensor, Tensor]:
    """Context-vector attention: u = tanh(W h + b), weights = softmax(u . ctx)."""
    w, b, ctx = params[f"{prefix}.W"], params[f"{prefix}.b"], params[f"{prefix}.ctx"]
    rows, steps, dim = states.shape
    u = ag.tanh(ag.add(ag.matmul(states, w), b))
    logits = ag.reshape(ag.matmul(u, ag.reshape(ctx, (-1, 1))), (rows, steps))
    alpha = ag.softmax(logits, axis=1, mask=mask)
    pooled = ag.sum_(ag.mul(states, ag.reshape(alpha, (rows, steps, 1))), axis=1)
    return pooled, alpha


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    steps = max(len(s) for s in seqs)
    ids = np.full((len(seqs), steps), PAD_INDEX, dtype=np.int64)
    mask = np.zeros((len(seqs), steps))
    for r, s in enumerate(seqs):
        ids[r, : len(s)] = s
        mask[r, : len(s)] = 1.0
    return ids, mask


def _check_tokens(seqs: Sequence[Sequence[int]], vocab_size: int) -> None:
    for s in seqs:
        if len(s) == 0:
            raise ValueError("empty review")
        lo, hi = min(s), max(s)
        if lo < 0 or hi >= vocab_size:
            raise IndexError(f"token index out of range [0, {vocab_size}): {lo if lo < 0 else hi}")


def truncate(item: Sequence[Sequence[int]], cfg: EncoderConfig) -> list[list[int]]:
    return [list(r[: cfg.max_words]) for r in item[: cfg.max_reviews]]


def encode_reviews(params, reviews: Sequence[Sequence[int]], cfg: EncoderConfig) -> tuple[Tensor, list[np.ndarray]]:
    """Word level: one vector per review, (reviews, 2*hidden), plus attention weights."""
    _check_tokens(reviews, params["embedding"].shape[0])
    ids, mask = _pad(reviews)
    x = params["embedding"][ids]
    states, last = bilstm(x, mask, params, "word")
    lengths = mask.sum(axis=1).astype(int)
    if not cfg.attention:
        return last, [np.zeros(0) for _ in reviews]
    pooled, alpha = attend(states, mask, params, "word.attn")
    return pooled, [alpha.data[r, : lengths[r]] for r in range(len(reviews))]


def encode_items(params, review_vectors: Tensor, counts: Sequence[int], cfg: EncoderConfig) -> tuple[Tensor, list]:
    """Review level: ``review_vectors`` holds the reviews of all items back to back."""
    if any(c < 1 for c in counts):
        raise ValueError("every item needs at least one review")
    dim = review_vectors.shape[1]
    total = review_vectors.shape[0]
    steps = max(counts)
    index = np.full((len(counts), steps), total, dtype=np.int64)
    mask = np.zeros((len(counts), steps))
    start = 0
    for b, c in enumerate(counts):
        index[b, :c] = np.arange(start, start + c)
        mask[b, :c] = 1.0
        start += c
    padded = ag.concat([review_vectors, Tensor(np.zeros((1, dim)))], axis=0)[index]
    states, last = bilstm(padded, mask, params, "review")
    if not cfg.attention:
        return last, [None] * len(counts)
    z, alpha = attend(states, mask, params, "review.attn")
    return z, [alpha.data[b, :c] for b, c in enumerate(counts)]


def encode_batch(params, items: Sequence[Sequence[Sequence[int]]], cfg: EncoderConfig) -> BatchEncoding:
    items = [truncate(it, cfg) for it in items]
    if any(len(it) == 0 for it in items):
        raise ValueError("every item needs at least one review")
    flat = [r for it in items for r in it]
    vectors, word_alpha = encode_reviews(params, flat, cfg)
    z, review_alpha = encode_items(params, vectors, [len(it) for it in items], cfg)
    grouped, start = [], 0
    for it in items:
        grouped.append(word_alpha[start : start + len(it)])
        start += len(it)
    return BatchEncoding(z, grouped, review_alpha)


def encode_review(tokens: Sequence[int], params, cfg: EncoderConfig) -> tuple[Tensor, np.ndarray]:
    """Encode a single review; returns its (2*hidden,) vector and word attention."""
    if not 1 <= len(tokens) <= cfg.max_words:
        raise ValueError(f"review length must be in [1, {cfg.max_words}], got {len(tokens)}")
    vec, alpha = encode_reviews(params, [list(tokens)], cfg)
    return ag.reshape(vec, (-1,)), alpha[0]


def encode_music(review_vectors: Sequence[Tensor], params, cfg: EncoderConfig, word_attention=None) -> MusicRepresentation:
    if not review_vectors:
        raise ValueError("encode_music needs at least one review vector")
    if len(review_vectors) > cfg.max_reviews:
        raise ValueError(f"at most {cfg.max_reviews} reviews per item, got {len(review_vectors)}")
    stacked = ag.stack(list(review_vectors), axis=0)
    z, alpha = encode_items(params, stacked, [len(review_vectors)], cfg)
    return MusicRepresentation(ag.reshape(z, (-1,)), list(word_attention or []), alpha[0])


def encode_sample(item: Sequence[Sequence[int]], params, cfg: EncoderConfig) -> MusicRepresentation:
    enc = encode_batch(params, [item], cfg)
    return MusicRepresentation(ag.reshape(enc.z, (-1,)), enc.word_attention[0], enc.review_attention[0])


def sample_ids(sample: Sample, vocab: Vocabulary) -> list[list[int]]:
    return [vocab.encode(r) for r in sample.reviews]


def mean_pool_representation(item: Sequence[Sequence[int]], embedding: np.ndarray) -> np.ndarray:
    """Average word embeddings within each review, then average the reviews."""
    if not item:
        raise ValueError("cannot pool an item without reviews")
    per_review = [embedding[np.asarray(r, dtype=np.int64)].mean(axis=0) for r in item]
    return np.mean(per_review, axis=0)


def load_embeddings(path: str | Path, vocab: Vocabulary, table: np.ndarray) -> int:
    """Fill rows of ``table`` from a whitespace-separated ``token v1 v2 ...`` text file.

    Returns the number of vocabulary rows that were overwritten.
    """
    filled = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip().split(" ")
            if len(parts) != table.shape[1] + 1 or parts[0] not in vocab:
                continue
            table[vocab.index(parts[0])] = np.asarray(parts[1:], dtype=np.float64)
            filled += 1
    return filled
