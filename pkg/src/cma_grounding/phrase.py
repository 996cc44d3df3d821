"""Semantic phrase extraction: k attention distributions over query words."""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from .embedding import glorot_
from .errors import NumericalError


class PhraseAttention(NamedTuple):
    weights: torch.Tensor  # (B, k, L), rows are distributions over words
    guides: torch.Tensor  # (B, k, d)


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor | None, dim: int = -1) -> torch.Tensor:
    if not torch.isfinite(logits).all():
        raise NumericalError("non-finite attention logits")
    if mask is not None:
        logits = logits.masked_fill(~mask, float("-inf"))
    return torch.softmax(logits, dim=dim)


class PhraseExtractor(nn.Module):
    """``A = softmax_words(W_s2 tanh(W_s1 Q))``, ``G = A Q``."""

    def __init__(self, d: int, d_s: int, k: int):
        super().__init__()
        self.k = k
        self.w_s1 = nn.Linear(d, d_s, bias=False)
        self.w_s2 = nn.Linear(d_s, k, bias=False)
        glorot_(self.w_s1.weight)
        glorot_(self.w_s2.weight)

    def forward(self, words: torch.Tensor, mask: torch.Tensor | None = None) -> PhraseAttention:
        logits = self.w_s2(torch.tanh(self.w_s1(words))).transpose(1, 2)  # (B, k, L)
        weights = masked_softmax(logits, None if mask is None else mask.unsqueeze(1))
        return PhraseAttention(weights, weights @ words)


def extract_phrases(words: torch.Tensor, w_s1: torch.Tensor, w_s2: torch.Tensor,
                    mask: torch.Tensor | None = None) -> PhraseAttention:
    """Functional variant taking explicit ``(d_s, d)`` and ``(k, d_s)`` matrices."""
    logits = (torch.tanh(words @ w_s1.T) @ w_s2.T).transpose(-1, -2)
    if mask is not None:
        mask = mask.unsqueeze(-2)
    weights = masked_softmax(logits, mask)
    return PhraseAttention(weights, weights @ words)


def single_phrase_guide(sentence: torch.Tensor) -> torch.Tensor:
    """The single-guide model uses the sentence vector as its only guide."""
    return sentence
