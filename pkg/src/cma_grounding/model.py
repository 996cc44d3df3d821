"""Grounding head and the full cross-modality attention model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn

from .config import ModelConfig
from .embedding import PositionalEncoding, QueryEncoder, VideoEmbedding, glorot_
from .fusion import Decoder, Encoder
from .phrase import PhraseExtractor, masked_softmax, single_phrase_guide


class TimeInterval(NamedTuple):
    start: float
    end: float

    def clamped(self) -> "TimeInterval":
        return clamp_interval(self)

    def seconds(self, duration: float) -> "TimeInterval":
        return TimeInterval(self.start * duration, self.end * duration)


def clamp_interval(interval) -> TimeInterval:
    """Clip to [0, 1] and swap reversed endpoints; applied only when scoring."""
    s = min(max(float(interval[0]), 0.0), 1.0)
    e = min(max(float(interval[1]), 0.0), 1.0)
    return TimeInterval(s, e) if s <= e else TimeInterval(e, s)


class TemporalAttention(NamedTuple):
    weights: torch.Tensor  # (B, N)
    pooled: torch.Tensor  # (B, d)


class TemporalAttentionPool(nn.Module):
    """``a = softmax_clips(u^T tanh(W_b f))``; pooled = sum_i a_i f_i."""

    def __init__(self, d: int):
        super().__init__()
        self.w_b = nn.Linear(d, d, bias=False)
        glorot_(self.w_b.weight)
        self.u_ta = nn.Parameter(torch.empty(d).uniform_(-(3.0 / d) ** 0.5, (3.0 / d) ** 0.5))

    def forward(self, f: torch.Tensor) -> TemporalAttention:
        scores = torch.tanh(self.w_b(f)) @ self.u_ta  # (B, N)
        a = masked_softmax(scores, None)
        return TemporalAttention(a, (a.unsqueeze(-1) * f).sum(dim=1))


class BoundaryRegressor(nn.Module):
    """Two-output MLP; raw (unbounded) normalized start/end."""

    def __init__(self, d: int):
        super().__init__()
        hidden = max(1, d // 2)
        self.mlp = nn.Sequential(nn.Linear(d, hidden), nn.ReLU(), nn.Linear(hidden, 2))

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.mlp(pooled)


@dataclass
class ModelOutput:
    boundaries: torch.Tensor  # (B, 2), raw
    temporal_attention: torch.Tensor  # (B, N)
    phrase_attention: torch.Tensor | None  # (B, k, L) when k > 1
    video_embedded: torch.Tensor
    encoded: torch.Tensor | None
    fused_video: torch.Tensor | None
    fused_query: torch.Tensor | None
    attention_maps: list


class CMAModel(nn.Module):
    """Embed, extract guides, encode, decode, pool and regress.

    ``structure`` selects the ablation variant: ``encoder_only`` pools the
    encoder output directly, ``decoder_only`` feeds the embedded video to
    the decoder without guide fusion.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.d
        self.video_pe = PositionalEncoding(cfg.pe_variant, cfg.pe_max_len, d)
        self.query_pe = PositionalEncoding(cfg.pe_variant, cfg.pe_max_len, cfg.d_q)
        self.video_embed = VideoEmbedding(cfg.d_v, d, self.video_pe)
        self.query_encoder = QueryEncoder(cfg.vocab_size, cfg.word_dim, cfg.hidden,
                                          cfg.lstm_layers, self.query_pe)
        use_encoder = cfg.structure in ("full", "encoder_only")
        use_decoder = cfg.structure in ("full", "decoder_only")
        self.phrases = PhraseExtractor(d, cfg.phrase_dim, cfg.k) if cfg.k > 1 and use_encoder else None
        self.encoder = Encoder(d, cfg.heads, cfg.layers, cfg.k, cfg.fusion_op, cfg.ffn_mult,
                               cfg.residual) if use_encoder else None
        self.decoder = Decoder(d, cfg.heads, cfg.layers, cfg.ffn_mult, cfg.residual) if use_decoder else None
        self.pool = TemporalAttentionPool(d)
        self.regressor = BoundaryRegressor(d)

    def forward(self, video: torch.Tensor, tokens: torch.Tensor,
                query_mask: torch.Tensor | None = None) -> ModelOutput:
        if video.dim() == 2:
            video = video.unsqueeze(0)
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        if query_mask is None:
            query_mask = torch.ones_like(tokens, dtype=torch.bool)
        v_in = self.video_embed(video)
        words, sentence = self.query_encoder(tokens, query_mask)
        maps: list = []
        phrase_attention = None
        encoded = None
        if self.encoder is not None:
            if self.phrases is not None:
                phrase_attention, guides = self.phrases(words, query_mask)
            else:
                guides = single_phrase_guide(sentence).unsqueeze(1)
            encoded, enc_maps = self.encoder(v_in, guides)
            maps.extend(enc_maps)
        fused_video = fused_query = None
        if self.decoder is not None:
            dec = self.decoder(encoded if encoded is not None else v_in, words, query_mask)
            fused_video, fused_query = dec.video, dec.query
            maps.extend(dec.attention)
        final = fused_video if fused_video is not None else encoded
        pooled = self.pool(final)
        return ModelOutput(
            boundaries=self.regressor(pooled.pooled),
            temporal_attention=pooled.weights,
            phrase_attention=phrase_attention,
            video_embedded=v_in,
            encoded=encoded,
            fused_video=fused_video,
            fused_query=fused_query,
            attention_maps=maps,
        )


def build_model(cfg: ModelConfig, dtype: torch.dtype = torch.float32) -> CMAModel:
    """Seeded construction: identical configs yield identical parameters."""
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(cfg.seed)
    try:
        model = CMAModel(cfg)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)


@torch.no_grad()
def predict(model: CMAModel, video, tokens) -> TimeInterval:
    """Raw normalized (start, end) for one video/query pair."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    video = torch.as_tensor(video, dtype=dtype)
    tokens = torch.as_tensor(tokens, dtype=torch.long)
    out = model(video, tokens)
    model.train(was_training)
    s, e = out.boundaries[0].tolist()
    return TimeInterval(s, e)
