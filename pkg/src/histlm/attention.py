"""Transformer building blocks.

Encoder side (hierarchical model): post-norm layers with disentangled
attention over a clipped relative-position table.  Encoder-decoder side
(lemmatizer): pre-norm RMS layers with log-bucketed relative-position biases
and GEGLU feed-forward blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from histlm import autodiff as ad


@dataclass
class EncoderLayerConfig:
    hidden_size: int = 768
    intermediate_size: int = 3072
    attention_heads: int = 12
    dropout: float = 0.1
    max_relative_distance: int = 512

    def __post_init__(self):
        if self.hidden_size % self.attention_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by "
                             f"{self.attention_heads} attention heads")


class RelPosEmbedding(nn.Module):
    """Embeddings for clipped relative distances in [-k, k]; row ``d + k`` holds distance d."""

    trunc_normal_params = ("table",)

    def __init__(self, max_relative_distance: int, hidden_size: int):
        super().__init__()
        self.max_relative_distance = max_relative_distance
        self.table = nn.Parameter(torch.zeros(2 * max_relative_distance + 1, hidden_size))

    def index(self, q_pos, k_pos):
        k = self.max_relative_distance
        return (q_pos[:, None] - k_pos[None, :]).clamp(-k, k) + k


def _split_heads(x, heads):
    *lead, t, d = x.shape
    return x.view(*lead, t, heads, d // heads).transpose(-3, -2)


def _merge_heads(x):
    *lead, h, t, dh = x.shape
    return x.transpose(-3, -2).reshape(*lead, t, h * dh)


def _key_mask_fill(logits, key_mask):
    if key_mask is None:
        return logits
    # finfo.min instead of -inf: fully padded rows stay finite, and masked weights still
    # underflow to exactly 0 whenever a row has at least one valid key
    return logits.masked_fill(~key_mask[..., None, None, :], torch.finfo(logits.dtype).min)


class DisentangledSelfAttention(nn.Module):
    """Attention logits = content->content + content->position + position->content,
    scaled by 1/sqrt(3 * d_head).  Positions are projected with the content query/key
    weights (no bias), so a zero position table leaves only the content term."""

    def __init__(self, hidden_size, heads, dropout=0.0):
        super().__init__()
        if hidden_size % heads:
            raise ValueError("hidden_size must be divisible by heads")
        self.heads = heads
        self.query = nn.Linear(hidden_size, hidden_size)
        self.key = nn.Linear(hidden_size, hidden_size)
        self.value = nn.Linear(hidden_size, hidden_size)
        self.out = nn.Linear(hidden_size, hidden_size)
        self.dropout = nn.Dropout(dropout)
        self.shape_log: list | None = None

    def forward(self, hidden, relpos: RelPosEmbedding, key_mask=None, positions=None):
        """``hidden`` [..., T, d]; ``key_mask`` [..., T] (True = attendable)."""
        t = hidden.shape[-2]
        if t == 0:
            raise ValueError("disentangled_attention: empty sequence")
        if positions is None:
            positions = torch.arange(t, device=hidden.device)
        rel_idx = relpos.index(positions, positions)
        lo, hi = int(rel_idx.min()), int(rel_idx.max())
        table = relpos.table[lo:hi + 1]
        rel_idx = rel_idx - lo

        q = _split_heads(self.query(hidden), self.heads)
        k = _split_heads(self.key(hidden), self.heads)
        v = _split_heads(self.value(hidden), self.heads)
        pos_q = _split_heads(table @ self.query.weight.T, self.heads)  # H, R, dh
        pos_k = _split_heads(table @ self.key.weight.T, self.heads)

        c2c = q @ k.transpose(-1, -2)
        c2p = torch.gather(q @ pos_k.transpose(-1, -2), -1, rel_idx.expand(*c2c.shape))
        # p2c[i, j] = k_j . pos_q[delta(j, i)]
        p2c = torch.gather(k @ pos_q.transpose(-1, -2), -1, rel_idx.expand(*c2c.shape))
        p2c = p2c.transpose(-1, -2)
        logits = (c2c + c2p + p2c) / math.sqrt(3 * q.shape[-1])
        logits = _key_mask_fill(logits, key_mask)
        probs = torch.softmax(logits, dim=-1)
        if self.shape_log is not None:
            self.shape_log.append(tuple(probs.shape[-2:]))
        self.last_probs = probs.detach()
        ctx = _merge_heads(self.dropout(probs) @ v)
        return self.out(ctx)


def disentangled_attention(attn: DisentangledSelfAttention, hidden, relpos, mask=None, positions=None):
    return attn(hidden, relpos, mask, positions)


class FeedForward(nn.Module):
    """Post-norm GELU block: LayerNorm(x + W2 gelu(W1 x))."""

    def __init__(self, hidden_size, intermediate_size, dropout=0.0):
        super().__init__()
        self.fc1 = nn.Linear(hidden_size, intermediate_size)
        self.fc2 = nn.Linear(intermediate_size, hidden_size)
        self.norm = nn.LayerNorm(hidden_size, eps=1e-7)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.norm(x + self.dropout(self.fc2(ad.gelu(self.fc1(x)))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderLayerConfig):
        super().__init__()
        self.attention = DisentangledSelfAttention(cfg.hidden_size, cfg.attention_heads, cfg.dropout)
        self.attn_norm = nn.LayerNorm(cfg.hidden_size, eps=1e-7)
        self.dropout = nn.Dropout(cfg.dropout)
        self.ffn = FeedForward(cfg.hidden_size, cfg.intermediate_size, cfg.dropout)

    def forward(self, x, relpos, key_mask=None, positions=None):
        x = self.attn_norm(x + self.dropout(self.attention(x, relpos, key_mask, positions)))
        return self.ffn(x)


class Encoder(nn.Module):
    """Stack of post-norm layers sharing one relative-position table."""

    def __init__(self, cfg: EncoderLayerConfig, layers: int, relpos: RelPosEmbedding | None = None):
        super().__init__()
        self.relpos = relpos if relpos is not None else RelPosEmbedding(cfg.max_relative_distance,
                                                                         cfg.hidden_size)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(layers))

    def forward(self, x, key_mask=None):
        for layer in self.layers:
            x = layer(x, self.relpos, key_mask)
        return x


# -- encoder-decoder side ----------------------------------------------------

def relative_position_bucket(relative_position, bidirectional=True, num_buckets=32, max_distance=128):
    """Map ``key_pos - query_pos`` to a bucket: exact for small distances, log-spaced up to
    ``max_distance``; bidirectional buckets split the range by sign."""
    if num_buckets < 1:
        raise ValueError("num_buckets must be >= 1")
    rel = torch.as_tensor(relative_position)
    buckets = torch.zeros_like(rel)
    n = num_buckets
    if bidirectional:
        n //= 2
        if n == 0:
            return buckets
        buckets = buckets + (rel > 0).long() * n
        rel = rel.abs()
    else:
        rel = -torch.clamp(rel, max=0)
    max_exact = max(n // 2, 1)
    is_small = rel < max_exact
    ratio = torch.log(rel.clamp(min=1).double() / max_exact) / math.log(max(max_distance / max_exact, 1 + 1e-9))
    large = max_exact + (ratio * (n - max_exact)).long()
    large = torch.clamp(large, max=n - 1)
    return buckets + torch.where(is_small, rel, large)


class RelativePositionBias(nn.Module):
    """Learned scalar bias per (bucket, head), shared by every layer of one stack."""

    def __init__(self, heads, num_buckets=32, max_distance=128, bidirectional=True):
        super().__init__()
        self.num_buckets, self.max_distance, self.bidirectional = num_buckets, max_distance, bidirectional
        self.embedding = nn.Embedding(num_buckets, heads)

    def buckets(self, q_len, k_len):
        rel = torch.arange(k_len)[None, :] - torch.arange(q_len)[:, None]
        return relative_position_bucket(rel, self.bidirectional, self.num_buckets, self.max_distance)

    def forward(self, q_len, k_len):
        return self.embedding(self.buckets(q_len, k_len)).permute(2, 0, 1)  # H, q, k


def relative_bias_attention(bias: RelativePositionBias, q_len, k_len, causal=False):
    """Additive logit bias [H, q_len, k_len]; causal adds a finfo.min upper triangle."""
    b = bias(q_len, k_len)
    if causal:
        future = torch.ones(q_len, k_len, dtype=torch.bool).triu(1)
        b = b.masked_fill(future, torch.finfo(b.dtype).min)
    return b


class RMSNorm(nn.Module):
    def __init__(self, hidden_size, eps=1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(hidden_size))
        self.eps = eps

    def forward(self, x):
        return ad.rms_norm(x, self.weight, self.eps)


class BiasAttention(nn.Module):
    """Unscaled multi-head attention with an additive position bias; no linear biases."""

    def __init__(self, hidden_size, heads, dropout=0.0):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(hidden_size, hidden_size, bias=False)
        self.k = nn.Linear(hidden_size, hidden_size, bias=False)
        self.v = nn.Linear(hidden_size, hidden_size, bias=False)
        self.o = nn.Linear(hidden_size, hidden_size, bias=False)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, context=None, bias=None, key_mask=None):
        context = x if context is None else context
        q = _split_heads(self.q(x), self.heads)
        k = _split_heads(self.k(context), self.heads)
        v = _split_heads(self.v(context), self.heads)
        logits = q @ k.transpose(-1, -2)
        if bias is not None:
            logits = logits + bias
        logits = _key_mask_fill(logits, key_mask)
        probs = torch.softmax(logits, dim=-1)
        self.last_probs = probs.detach()
        return self.o(_merge_heads(self.dropout(probs) @ v))


class GegluFeedForward(nn.Module):
    """W2 (gelu(W1a x) * W1b x), without residual or norm."""

    def __init__(self, hidden_size, intermediate_size, dropout=0.0):
        super().__init__()
        self.wi_gate = nn.Linear(hidden_size, intermediate_size, bias=False)
        self.wi_up = nn.Linear(hidden_size, intermediate_size, bias=False)
        self.wo = nn.Linear(intermediate_size, hidden_size, bias=False)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.wo(self.dropout(ad.geglu(x, self.wi_gate.weight.T, self.wi_up.weight.T)))


class PreNormFeedForward(nn.Module):
    """x + GEGLU(RMSNorm(x))."""

    def __init__(self, hidden_size, intermediate_size, dropout=0.0):
        super().__init__()
        self.norm = RMSNorm(hidden_size)
        self.ff = GegluFeedForward(hidden_size, intermediate_size, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return x + self.dropout(self.ff(self.norm(x)))


def ffn_block(block: nn.Module, hidden):
    return block(hidden)


class T5EncoderBlock(nn.Module):
    def __init__(self, hidden_size, intermediate_size, heads, dropout=0.0):
        super().__init__()
        self.norm = RMSNorm(hidden_size)
        self.attention = BiasAttention(hidden_size, heads, dropout)
        self.dropout = nn.Dropout(dropout)
        self.ff = PreNormFeedForward(hidden_size, intermediate_size, dropout)

    def forward(self, x, bias, key_mask):
        x = x + self.dropout(self.attention(self.norm(x), bias=bias, key_mask=key_mask))
        return self.ff(x)


class T5DecoderBlock(nn.Module):
    def __init__(self, hidden_size, intermediate_size, heads, dropout=0.0):
        super().__init__()
        self.self_norm = RMSNorm(hidden_size)
        self.self_attention = BiasAttention(hidden_size, heads, dropout)
        self.cross_norm = RMSNorm(hidden_size)
        self.cross_attention = BiasAttention(hidden_size, heads, dropout)
        self.dropout = nn.Dropout(dropout)
        self.ff = PreNormFeedForward(hidden_size, intermediate_size, dropout)

    def forward(self, y, memory, self_bias, memory_mask, target_mask=None):
        y = y + self.dropout(self.self_attention(self.self_norm(y), bias=self_bias, key_mask=target_mask))
        y = y + self.dropout(self.cross_attention(self.cross_norm(y), context=memory, key_mask=memory_mask))
        return self.ff(y)
