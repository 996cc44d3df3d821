"""Video and query input embeddings.

Tensors are batch-first: a video is ``(B, N, d)`` and a query ``(B, L, d)``,
i.e. the transpose of the column-per-position layout used in the math.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DataError


def sinusoidal_table(positions: torch.Tensor, dim: int, dtype=torch.float64) -> torch.Tensor:
    """Rows ``[sin(p / 10000^(2i/dim)), cos(p / 10000^(2i/dim)), ...]`` for each position."""
    if dim % 2:
        raise ConfigError(f"sinusoidal encoding needs an even dim, got {dim}")
    pos = positions.to(torch.float64).unsqueeze(-1)
    freq = torch.pow(10000.0, -torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    table = torch.zeros(*positions.shape, dim, dtype=torch.float64)
    table[..., 0::2] = torch.sin(pos * freq)
    table[..., 1::2] = torch.cos(pos * freq)
    return table.to(dtype)


class PositionalEncoding(nn.Module):
    """Additive position signal: ``none``, fixed ``sinusoidal`` or a ``learned`` table."""

    def __init__(self, variant: str, max_len: int, dim: int):
        super().__init__()
        if variant not in ("none", "sinusoidal", "learned"):
            raise ConfigError(f"unknown positional encoding variant {variant!r}")
        self.variant = variant
        self.max_len = max_len
        self.dim = dim
        if variant == "sinusoidal":
            self.register_buffer("table", sinusoidal_table(torch.arange(max_len), dim))
        elif variant == "learned":
            self.table = nn.Parameter(torch.randn(max_len, dim) * 0.02)
        else:
            self.table = None

    def forward(self, positions: torch.Tensor | Sequence[int]) -> torch.Tensor:
        positions = torch.as_tensor(positions, dtype=torch.long)
        if positions.numel() and (positions.min() < 0 or positions.max() >= self.max_len):
            raise IndexError(f"positions must lie in [0, {self.max_len}), got "
                             f"[{int(positions.min())}, {int(positions.max())}]")
        if self.table is None:
            return torch.zeros(*positions.shape, self.dim, dtype=torch.float64)
        return self.table[positions]

    def extra_repr(self) -> str:
        return f"variant={self.variant}, max_len={self.max_len}, dim={self.dim}"


def positional_encoding(variant: str, positions: Sequence[int], dim: int,
                        max_len: int | None = None, table: torch.Tensor | None = None) -> torch.Tensor:
    """Functional form returning a ``(len(positions), dim)`` matrix."""
    positions = torch.as_tensor(positions, dtype=torch.long)
    max_len = max_len if max_len is not None else int(positions.max()) + 1
    if positions.numel() and int(positions.max()) >= max_len:
        raise IndexError(f"position {int(positions.max())} >= max_len {max_len}")
    if variant == "none":
        return torch.zeros(len(positions), dim, dtype=torch.float64)
    if variant == "sinusoidal":
        return sinusoidal_table(positions, dim)
    if variant == "learned":
        if table is None:
            raise ConfigError("learned positional encoding needs a table")
        return table[positions]
    raise ConfigError(f"unknown positional encoding variant {variant!r}")


def glorot_(weight: torch.Tensor) -> torch.Tensor:
    fan_out, fan_in = weight.shape[0], weight.shape[1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        return weight.uniform_(-bound, bound)


class VideoEmbedding(nn.Module):
    """``ReLU(W_v x) + PE`` per clip."""

    def __init__(self, d_v: int, d: int, pe: PositionalEncoding):
        super().__init__()
        self.d_v = d_v
        self.proj = nn.Linear(d_v, d, bias=False)
        glorot_(self.proj.weight)
        self.pe = pe

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.d_v:
            raise ConfigError(f"video features have dim {features.shape[-1]}, "
                              f"projection expects {self.d_v}")
        n = features.shape[-2]
        return torch.relu(self.proj(features)) + self.pe(torch.arange(n)).to(features.dtype)


class QueryEncoder(nn.Module):
    """Word embedding followed by a bi-directional LSTM.

    Returns per-word features ``[h_f; h_b] + PE`` of shape ``(B, L, 2*hidden)``
    and the sentence vector ``[h_f at last word; h_b at first word]`` without
    any position term.
    """

    def __init__(self, vocab_size: int, word_dim: int, hidden: int, num_layers: int,
                 pe: PositionalEncoding):
        super().__init__()
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.word_embedding = nn.Embedding(vocab_size, word_dim, padding_idx=0)
        glorot_(self.word_embedding.weight)
        self.lstm = nn.LSTM(word_dim, hidden, num_layers=num_layers, batch_first=True,
                            bidirectional=True)
        self.pe = pe

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor | None = None):
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        bad = (tokens < 0) | (tokens >= self.vocab_size)
        if bad.any():
            raise DataError(f"token id {int(tokens[bad][0])} outside vocabulary "
                            f"of size {self.vocab_size}")
        if mask is None:
            mask = torch.ones_like(tokens, dtype=torch.bool)
        lengths = mask.sum(dim=1)
        if (lengths < 1).any():
            raise DataError("every query needs at least one token")
        words = self.word_embedding(tokens)
        packed = nn.utils.rnn.pack_padded_sequence(words, lengths.cpu(), batch_first=True,
                                                   enforce_sorted=False)
        out, _ = self.lstm(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True,
                                                  total_length=tokens.shape[1])
        h = self.hidden
        rows = torch.arange(tokens.shape[0])
        forward_last = out[rows, lengths - 1, :h]
        backward_first = out[:, 0, h:]
        sentence = torch.cat([forward_last, backward_first], dim=-1)
        per_word = out + self.pe(torch.arange(tokens.shape[1])).to(out.dtype)
        per_word = per_word * mask.unsqueeze(-1).to(out.dtype)
        return per_word, sentence

    def load_pretrained(self, path: str | Path, vocab: Mapping[str, int]) -> int:
        """Copy vectors for known words from a ``word v1 v2 ...`` text file.

        Returns the number of vocabulary rows overwritten.
        """
        dim = self.word_embedding.embedding_dim
        vectors = read_word_vectors(path, dim)
        hits = 0
        with torch.no_grad():
            for word, idx in vocab.items():
                if word in vectors and 0 <= idx < self.vocab_size:
                    self.word_embedding.weight[idx] = torch.as_tensor(vectors[word])
                    hits += 1
        return hits


def read_word_vectors(path: str | Path, dim: int) -> dict[str, np.ndarray]:
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if not parts or not parts[0]:
                continue
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            try:
                vectors[parts[0]] = np.asarray(parts[1:], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return vectors
