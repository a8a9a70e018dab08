"""BLEU and cosine semantic similarity with a pluggable sentence embedder."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np
import torch

PRECISION_FLOOR = 1e-9


def _ngrams(ids, n: int) -> Counter:
    return Counter(tuple(ids[i:i + n]) for i in range(len(ids) - n + 1))


def bleu(candidate, reference, max_n: int = 4) -> float:
    """Cumulative BLEU with uniform 1/max_n weights, clipped modified n-gram
    precision, and brevity penalty exp(1 - r/c) for short candidates.
    Zero counts are floored at 1e-9 before the log."""
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be in 1..4")
    if len(reference) == 0:
        raise ValueError("reference must be non-empty")
    if len(candidate) == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        ref = _ngrams(reference, n)
        clipped = sum(min(c, ref[g]) for g, c in cand.items())
        total = max(len(candidate) - n + 1, 0)
        p = clipped / total if total > 0 else 0.0
        log_sum += math.log(max(p, PRECISION_FLOOR)) / max_n
    c, r = len(candidate), len(reference)
    bp = math.exp(1.0 - r / c) if c < r else 1.0
    return bp * math.exp(log_sum)


def ngram_precisions(candidate, reference, max_n: int = 4) -> list[float]:
    """Per-n modified precisions, so a non-cumulative reading is recoverable."""
    out = []
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        ref = _ngrams(reference, n)
        clipped = sum(min(c, ref[g]) for g, c in cand.items())
        total = max(len(candidate) - n + 1, 0)
        out.append(clipped / total if total > 0 else 0.0)
    return out


def semantic_similarity(a, b, embedder) -> float:
    """Cosine similarity of the two sentence embeddings; a zero embedding
    yields similarity 0."""
    va = np.asarray(embedder(a), dtype=np.float64)
    vb = np.asarray(embedder(b), dtype=np.float64)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(va, vb) / (na * nb))


class EncoderMeanEmbedder:
    """Default sentence embedder: mean-pooled trained-encoder outputs."""

    def __init__(self, model):
        self.model = model

    def __call__(self, sentence) -> np.ndarray:
        if len(sentence) == 0:
            return np.zeros(self.model.cfg.d_emb)
        ids = torch.tensor([list(sentence)], dtype=torch.long)
        with torch.no_grad():
            enc = self.model.semantic_encode(ids)
        return enc[0, 1:].mean(dim=0).numpy()


class TableEmbedder:
    """Embeddings from an external table file: `token_id v1 v2 ...` per line;
    a sentence embeds as the mean of its token vectors."""

    def __init__(self, path: str):
        self.table: dict[int, np.ndarray] = {}
        width = None
        with open(path, encoding="utf-8") as f:
            for line in f:
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.split()
                vec = np.array([float(x) for x in parts[1:]])
                if width is None:
                    width = vec.size
                elif vec.size != width:
                    raise ValueError("inconsistent embedding width in table")
                self.table[int(parts[0])] = vec
        if width is None:
            raise ValueError("empty embedding table")
        self.width = width

    def __call__(self, sentence) -> np.ndarray:
        vecs = [self.table[t] for t in sentence if t in self.table]
        if not vecs:
            return np.zeros(self.width)
        return np.mean(vecs, axis=0)
