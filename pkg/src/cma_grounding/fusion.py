"""Cross-modality fusion: guide-conditioned encoder and two-branch decoder."""

from __future__ import annotations

import math
from typing import NamedTuple

import torch
from torch import nn

from .embedding import glorot_
from .errors import ConfigError
from .phrase import masked_softmax


def fuse_guide(video: torch.Tensor, guide: torch.Tensor, op: str,
               proj: nn.Module | None = None) -> torch.Tensor:
    """Combine every clip of ``video`` (B, N, d) with ``guide`` (B, d)."""
    g = guide.unsqueeze(-2).expand_as(video)
    if op == "hadamard":
        return video * g
    if op == "add":
        return video + g
    if op == "concat":
        if proj is None:
            raise ConfigError("concat fusion needs a projection back to d")
        return proj(torch.cat([video, g], dim=-1))
    raise ConfigError(f"unknown fusion operator {op!r}")


class GuideFusion(nn.Module):
    def __init__(self, d: int, op: str):
        super().__init__()
        if op not in ("hadamard", "concat", "add"):
            raise ConfigError(f"unknown fusion operator {op!r}")
        self.op = op
        self.proj = nn.Linear(2 * d, d) if op == "concat" else None

    def forward(self, video: torch.Tensor, guide: torch.Tensor) -> torch.Tensor:
        return fuse_guide(video, guide, self.op, self.proj)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with ``heads`` parallel heads of width d/heads."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads:
            raise ConfigError(f"d={d} is not divisible by heads={heads}")
        self.d = d
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        for lin in (self.q, self.k, self.v, self.out):
            glorot_(lin.weight)
            nn.init.zeros_(lin.bias)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, s, _ = x.shape
        return x.view(b, s, self.heads, self.d // self.heads).transpose(1, 2)

    def forward(self, x: torch.Tensor, y: torch.Tensor, key_mask: torch.Tensor | None = None):
        if x.shape[-1] != self.d or y.shape[-1] != self.d:
            raise ConfigError(f"attention expects width {self.d}, got {x.shape[-1]} and {y.shape[-1]}")
        q, k, v = self._split(self.q(x)), self._split(self.k(y)), self._split(self.v(y))
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.d // self.heads)
        mask = None if key_mask is None else key_mask[:, None, None, :]
        weights = masked_softmax(logits, mask)  # (B, H, Sx, Sy)
        ctx = (weights @ v).transpose(1, 2).reshape(x.shape[0], x.shape[1], self.d)
        return self.out(ctx), weights


class AttentionBlock(nn.Module):
    """Attention sublayer then position-wise feed-forward, each with residual + LayerNorm."""

    def __init__(self, d: int, heads: int, ffn_mult: int = 4, residual: bool = True):
        super().__init__()
        self.residual = residual
        self.attn = MultiHeadAttention(d, heads)
        self.norm1 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(nn.Linear(d, ffn_mult * d), nn.ReLU(), nn.Linear(ffn_mult * d, d))
        self.norm2 = nn.LayerNorm(d)

    def forward(self, x: torch.Tensor, y: torch.Tensor | None = None,
                key_mask: torch.Tensor | None = None):
        y = x if y is None else y
        a, weights = self.attn(x, y, key_mask)
        h = self.norm1(x + a if self.residual else a)
        f = self.ffn(h)
        return self.norm2(h + f if self.residual else f), weights


def self_attention(x: torch.Tensor, block: AttentionBlock, mask: torch.Tensor | None = None):
    return block(x, x, mask)


def bi_attention(x: torch.Tensor, y: torch.Tensor, block: AttentionBlock,
                 y_mask: torch.Tensor | None = None):
    """``x`` supplies queries; ``y`` supplies keys and values."""
    return block(x, y, y_mask)


class Encoder(nn.Module):
    """Fuse the video with each guide, self-attend, then aggregate across guides."""

    def __init__(self, d: int, heads: int, layers: int, k: int, fusion_op: str,
                 ffn_mult: int = 4, residual: bool = True):
        super().__init__()
        if layers < 1:
            raise ConfigError("encoder needs at least one layer")
        self.k = k
        self.fusion = GuideFusion(d, fusion_op)
        self.blocks = nn.ModuleList(AttentionBlock(d, heads, ffn_mult, residual) for _ in range(layers))
        # single-guide model passes the attended features through unchanged
        self.aggregate = nn.Sequential(nn.Linear(k * d, d), nn.Tanh(), nn.Linear(d, d)) if k > 1 else None

    def forward(self, video: torch.Tensor, guides: torch.Tensor):
        """``video`` (B, N, d); ``guides`` (B, k, d). Returns (B, N, d) and attention maps."""
        if guides.dim() == 2:
            guides = guides.unsqueeze(1)
        b, n, d = video.shape
        k = guides.shape[1]
        if k == 0:
            raise ConfigError("encoder needs at least one guide vector")
        if k != self.k:
            raise ConfigError(f"encoder built for {self.k} guides, got {k}")
        x = self.fusion(video.unsqueeze(1).expand(b, k, n, d).reshape(b * k, n, d),
                        guides.reshape(b * k, d))
        maps = []
        for block in self.blocks:
            x, w = block(x, x)
            maps.append(w.view(b, k, *w.shape[1:]))
        x = x.view(b, k, n, d)
        if self.aggregate is None:
            return x[:, 0], maps
        return self.aggregate(x.permute(0, 2, 1, 3).reshape(b, n, k * d)), maps


class DecoderOutput(NamedTuple):
    video: torch.Tensor  # (B, N, d)
    query: torch.Tensor  # (B, L, d)
    attention: list


class DecoderLayer(nn.Module):
    def __init__(self, d: int, heads: int, ffn_mult: int = 4, residual: bool = True):
        super().__init__()
        self.sa_query = AttentionBlock(d, heads, ffn_mult, residual)
        self.sa_video = AttentionBlock(d, heads, ffn_mult, residual)
        self.ba_query = AttentionBlock(d, heads, ffn_mult, residual)
        self.ba_video = AttentionBlock(d, heads, ffn_mult, residual)

    def forward(self, query: torch.Tensor, video: torch.Tensor, query_mask: torch.Tensor | None):
        q1, w_q1 = self_attention(query, self.sa_query, query_mask)
        v1, w_v1 = self_attention(video, self.sa_video)
        # each branch attends over the other branch's self-attended output
        q2, w_q2 = bi_attention(q1, v1, self.ba_query)
        v2, w_v2 = bi_attention(v1, q1, self.ba_video, query_mask)
        return q2, v2, [w_q1, w_v1, w_q2, w_v2]


class Decoder(nn.Module):
    def __init__(self, d: int, heads: int, layers: int, ffn_mult: int = 4, residual: bool = True):
        super().__init__()
        if layers < 1:
            raise ConfigError("decoder needs at least one layer")
        self.layers = nn.ModuleList(DecoderLayer(d, heads, ffn_mult, residual) for _ in range(layers))

    def forward(self, video: torch.Tensor, query: torch.Tensor,
                query_mask: torch.Tensor | None = None) -> DecoderOutput:
        maps = []
        for layer in self.layers:
            query, video, w = layer(query, video, query_mask)
            maps.extend(w)
        return DecoderOutput(video, query, maps)
