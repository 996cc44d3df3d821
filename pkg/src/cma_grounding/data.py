"""Annotations, feature files, synthetic data, statistics and batching."""

from __future__ import annotations

import json
import logging
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np
import torch

from .errors import DataError

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
FEATURE_MAGIC = b"CMAF"
# magic, uint16 d_v, uint16 clip count, 4 reserved bytes
FEATURE_HEADER = struct.Struct("<4sHH4x")


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+(?:'[a-z]+)?", text.lower())


class Vocabulary:
    """Word <-> id map with ``<pad>`` at 0 and ``<unk>`` at 1."""

    def __init__(self, words: Sequence[str] = ()):
        self.words: list[str] = [PAD, UNK]
        self.index: dict[str, int] = {PAD: 0, UNK: 1}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self.index:
            self.index[word] = len(self.words)
            self.words.append(word)
        return self.index[word]

    def encode(self, text: str) -> list[int]:
        return [self.index.get(w, 1) for w in tokenize(text)]

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def build(cls, texts: Sequence[str]) -> "Vocabulary":
        vocab = cls()
        for t in texts:
            for w in tokenize(t):
                vocab.add(w)
        return vocab


@dataclass
class GroundingSample:
    id: str
    query: str
    duration: float
    gt_seconds: tuple[float, float]
    features: np.ndarray | None = field(default=None, repr=False)  # (clips, d_v)
    tokens: list[int] | None = None
    # unperturbed interval in seconds, known only for synthetic data
    true_seconds: tuple[float, float] | None = None

    @property
    def gt(self) -> tuple[float, float]:
        return (self.gt_seconds[0] / self.duration, self.gt_seconds[1] / self.duration)

    @property
    def true_gt(self) -> tuple[float, float]:
        src = self.true_seconds if self.true_seconds is not None else self.gt_seconds
        return (src[0] / self.duration, src[1] / self.duration)

    def to_record(self) -> dict:
        rec = {"id": self.id, "start": self.gt_seconds[0], "end": self.gt_seconds[1],
               "duration": self.duration, "query": self.query}
        if self.true_seconds is not None:
            rec["true_start"], rec["true_end"] = self.true_seconds
        return rec


@dataclass
class Dataset:
    samples: list[GroundingSample]
    vocab: Vocabulary

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def subset(self, idx) -> "Dataset":
        return Dataset([self.samples[i] for i in idx], self.vocab)

    @property
    def d_v(self) -> int:
        return self.samples[0].features.shape[1]


def _make_sample(rid: str, start: float, end: float, duration: float, query: str,
                 where: str) -> GroundingSample | None:
    if not duration > 0:
        raise DataError(f"{where}: duration must be positive, got {duration}")
    if end < start:
        log.warning("%s: end %.3f before start %.3f, record rejected", where, end, start)
        return None
    if end == start:
        log.warning("%s: zero-length interval, record rejected", where)
        return None
    if start < 0:
        log.warning("%s: start %.3f below 0, clamped", where, start)
        start = 0.0
    if end > duration:
        log.warning("%s: end %.3f past duration %.3f, clamped", where, end, duration)
        end = duration
    return GroundingSample(rid, query, float(duration), (float(start), float(end)))


def parse_annotations(path: str | Path, fmt: str = "jsonl",
                      durations: Mapping[str, float] | None = None) -> list[GroundingSample]:
    """Read ``jsonl`` or ``charades_txt`` annotations (seconds) into feature-less samples.

    ``charades_txt`` lines carry no duration, so ``durations`` maps id to seconds.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise DataError(f"cannot read annotations {path}: {exc}") from exc
    samples = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            if fmt == "jsonl":
                rec = json.loads(line)
                sample = _make_sample(str(rec["id"]), float(rec["start"]), float(rec["end"]),
                                      float(rec["duration"]), rec["query"], where)
                if sample is not None and "true_start" in rec:
                    sample.true_seconds = (float(rec["true_start"]), float(rec["true_end"]))
            elif fmt == "charades_txt":
                head, sentence = line.split("##", 1)
                rid, start, end = head.split()
                if durations is None or rid not in durations:
                    raise DataError(f"{where}: no duration known for video {rid!r}")
                sample = _make_sample(rid, float(start), float(end), float(durations[rid]),
                                      sentence.strip(), where)
            else:
                raise DataError(f"unknown annotation format {fmt!r}")
        except DataError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{where}: malformed annotation ({exc})") from exc
        if sample is not None:
            samples.append(sample)
    return samples


def write_annotations(samples: Sequence[GroundingSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record(), ensure_ascii=False) + "\n")


def write_features(path: str | Path, features: np.ndarray) -> None:
    """Little-endian float32 ``(clips, d_v)`` matrix behind a 12-byte header."""
    features = np.asarray(features, dtype="<f4")
    clips, d_v = features.shape
    if clips > 0xFFFF or d_v > 0xFFFF:
        raise DataError(f"feature matrix {features.shape} too large for the header")
    with open(path, "wb") as fh:
        fh.write(FEATURE_HEADER.pack(FEATURE_MAGIC, d_v, clips))
        fh.write(np.ascontiguousarray(features).tobytes())


def read_features(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < FEATURE_HEADER.size:
        raise DataError(f"{path}: truncated feature header")
    magic, d_v, clips = FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    body = raw[FEATURE_HEADER.size:]
    if len(body) != 4 * d_v * clips:
        raise DataError(f"{path}: expected {clips}x{d_v} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(clips, d_v).astype(np.float32)


def attach_features(samples: Sequence[GroundingSample], feature_dir: str | Path) -> None:
    feature_dir = Path(feature_dir)
    cache: dict[str, np.ndarray] = {}
    for s in samples:
        if s.id not in cache:
            path = feature_dir / f"{s.id}.cmaf"
            if not path.exists():
                raise DataError(f"missing feature file {path}")
            cache[s.id] = read_features(path)
        s.features = cache[s.id]


def load_dataset(annotations: str | Path, feature_dir: str | Path, fmt: str = "jsonl",
                 vocab: Vocabulary | None = None,
                 durations: Mapping[str, float] | None = None) -> Dataset:
    samples = parse_annotations(annotations, fmt, durations)
    attach_features(samples, feature_dir)
    vocab = vocab or Vocabulary.build([s.query for s in samples])
    for s in samples:
        s.tokens = vocab.encode(s.query) or [1]
    return Dataset(samples, vocab)


def save_dataset(dataset: Dataset, out_dir: str | Path, name: str = "annotations.jsonl") -> Path:
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    written = set()
    for s in dataset:
        if s.id not in written:
            write_features(out_dir / "features" / f"{s.id}.cmaf", s.features)
            written.add(s.id)
    write_annotations(dataset.samples, out_dir / name)
    return out_dir / name


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticConfig:
    count: int = 1000
    N: int = 16
    d_v: int = 32
    vocab: int = 64
    seed: int = 0
    bias_sigma: float = 0.0
    mean_ratio: float = 0.27
    ratio_concentration: float = 12.0
    min_ratio: float = 0.02
    n_actions: int = 8
    distractors: int = 1
    noise: float = 0.3
    signal: float = 1.0
    query_len: tuple[int, int] = (3, 8)
    duration: tuple[float, float] = (20.0, 40.0)


def _coverage(n: int, start: float, end: float) -> np.ndarray:
    """Fraction of each clip span [i/n, (i+1)/n) inside [start, end]."""
    lo = np.arange(n) / n
    return np.clip(np.minimum(lo + 1 / n, end) - np.maximum(lo, start), 0, None) * n


def _perturb(rng: np.random.Generator, start: float, end: float, sigma: float) -> tuple[float, float]:
    if sigma <= 0:
        return start, end
    scale = sigma * (end - start)

    def draw() -> float:
        while True:
            e = rng.normal(0.0, scale)
            if abs(e) <= 2 * scale:
                return e

    while True:
        s, e = start + draw(), end + draw()
        s, e = min(max(s, 0.0), 1.0), min(max(e, 0.0), 1.0)
        if e > s:
            return s, e


def action_signals(cfg: SyntheticConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """``(n_actions, d_v)`` signal vectors of norm ``signal * sqrt(d_v)``.

    With no ``rng`` these are the vectors ``generate_synthetic(cfg)`` uses.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    signals = rng.normal(size=(cfg.n_actions, cfg.d_v))
    return signals * (cfg.signal * math.sqrt(cfg.d_v) / np.linalg.norm(signals, axis=1, keepdims=True))


def synthetic_features(cfg: SyntheticConfig, interval: tuple[float, float], action: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Noisy clip features carrying ``action`` over ``interval`` (no distractor)."""
    feats = rng.normal(0.0, cfg.noise, size=(cfg.N, cfg.d_v))
    feats += _coverage(cfg.N, *interval)[:, None] * action_signals(cfg)[action]
    return feats.astype(np.float32)


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Toy grounding task with a known answer.

    Every query contains exactly one action word. Clips covered by the target
    interval carry that action's signal vector (scaled by coverage); a
    distractor interval carries a different action's signal. The stored
    annotation is the true interval jittered by a truncated Gaussian whose
    width is ``bias_sigma`` times the interval length.
    """
    n_filler = cfg.vocab - 2 - cfg.n_actions
    if n_filler < 1:
        raise DataError(f"vocab {cfg.vocab} too small for {cfg.n_actions} actions")
    rng = np.random.default_rng(cfg.seed)
    actions = [f"action{i}" for i in range(cfg.n_actions)]
    fillers = [f"word{i}" for i in range(n_filler)]
    vocab = Vocabulary(actions + fillers)
    signals = action_signals(cfg, rng)
    a = cfg.mean_ratio * cfg.ratio_concentration
    b = (1 - cfg.mean_ratio) * cfg.ratio_concentration
    samples = []
    for idx in range(cfg.count):
        length = float(np.clip(rng.beta(a, b), cfg.min_ratio, 1.0))
        start = float(rng.uniform(0.0, 1.0 - length))
        end = start + length
        action = int(rng.integers(cfg.n_actions))
        feats = rng.normal(0.0, cfg.noise, size=(cfg.N, cfg.d_v))
        feats += _coverage(cfg.N, start, end)[:, None] * signals[action]
        for _ in range(cfg.distractors):
            other = int((action + 1 + rng.integers(cfg.n_actions - 1)) % cfg.n_actions)
            d_len = float(np.clip(rng.beta(a, b), cfg.min_ratio, 1.0))
            gaps = [(0.0, start), (end, 1.0)]
            gaps = [g for g in gaps if g[1] - g[0] >= d_len]
            if not gaps:
                continue
            g0, g1 = gaps[int(rng.integers(len(gaps)))]
            d_start = float(rng.uniform(g0, g1 - d_len))
            feats += _coverage(cfg.N, d_start, d_start + d_len)[:, None] * signals[other]
        q_len = int(rng.integers(cfg.query_len[0], cfg.query_len[1] + 1))
        words = [fillers[int(i)] for i in rng.integers(n_filler, size=q_len)]
        words[int(rng.integers(q_len))] = actions[action]
        query = " ".join(words)
        duration = float(rng.uniform(*cfg.duration))
        ann_start, ann_end = _perturb(rng, start, end, cfg.bias_sigma)
        samples.append(GroundingSample(
            id=f"syn{cfg.seed}_{idx:06d}",
            query=query,
            duration=duration,
            gt_seconds=(ann_start * duration, ann_end * duration),
            features=feats.astype(np.float32),
            tokens=vocab.encode(query),
            true_seconds=(start * duration, end * duration),
        ))
    return Dataset(samples, vocab)


# ---------------------------------------------------------------------------
# statistics and batching


@dataclass
class DatasetStats:
    ratio_histogram: list[int]
    mean_ratio: float
    count: int

    @property
    def bucket_edges(self) -> list[float]:
        b = len(self.ratio_histogram)
        return [i / b for i in range(b + 1)]


def dataset_stats(samples, buckets: int = 20) -> DatasetStats:
    """Histogram of interval length over video duration."""
    samples = list(samples)
    if not samples:
        raise DataError("cannot compute statistics of an empty dataset")
    hist = [0] * buckets
    ratios = []
    for s in samples:
        gs, ge = s.gt
        r = ge - gs
        ratios.append(r)
        hist[min(int(r * buckets), buckets - 1)] += 1
    return DatasetStats(hist, float(np.mean(ratios)), len(samples))


def uniform_sample_indices(m: int, n: int) -> np.ndarray:
    """``n`` evenly spaced indices over ``m`` clips; ties round down, short videos repeat."""
    if m < 1:
        raise DataError("video has no clips")
    grid = np.linspace(0, m - 1, n)
    return np.ceil(grid - 0.5).astype(np.int64)


class Batch(NamedTuple):
    video: torch.Tensor  # (B, N, d_v)
    tokens: torch.Tensor  # (B, L_max)
    mask: torch.Tensor  # (B, L_max) bool
    gt: torch.Tensor  # (B, 2)
    true_gt: torch.Tensor  # (B, 2)
    duration: torch.Tensor  # (B,)
    ids: list[str]


def collate(samples: Sequence[GroundingSample], N: int, L_max: int,
            dtype: torch.dtype = torch.float32) -> Batch:
    b = len(samples)
    tokens = torch.zeros(b, L_max, dtype=torch.long)
    mask = torch.zeros(b, L_max, dtype=torch.bool)
    videos = []
    for i, s in enumerate(samples):
        if s.features is None:
            raise DataError(f"sample {s.id} has no features attached")
        feats = s.features
        if feats.shape[0] != N:
            feats = feats[uniform_sample_indices(feats.shape[0], N)]
        videos.append(feats)
        toks = list(s.tokens or [1])[:L_max]
        tokens[i, :len(toks)] = torch.as_tensor(toks)
        mask[i, :len(toks)] = True
    return Batch(
        video=torch.as_tensor(np.stack(videos), dtype=dtype),
        tokens=tokens,
        mask=mask,
        gt=torch.tensor([s.gt for s in samples], dtype=dtype),
        true_gt=torch.tensor([s.true_gt for s in samples], dtype=dtype),
        duration=torch.tensor([s.duration for s in samples], dtype=dtype),
        ids=[s.id for s in samples],
    )


def iterate_batches(samples: Sequence[GroundingSample], size: int, N: int, L_max: int,
                    rng: np.random.Generator | None = None,
                    dtype: torch.dtype = torch.float32) -> Iterator[Batch]:
    """Fixed-shape batches in input order, or shuffled when ``rng`` is given."""
    if size < 1:
        raise DataError(f"batch size must be positive, got {size}")
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    for lo in range(0, len(order), size):
        yield collate([samples[int(i)] for i in order[lo:lo + size]], N, L_max, dtype)
