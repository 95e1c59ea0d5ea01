"""Reference symmetric InfoNCE loss and retrieval metrics.

The loss is the negated batch mean of the row-wise and column-wise log
softmax of the positive pairs, so it is non-negative and minimized when each
video embedding singles out its own text (and vice versa).
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingBatch, LossReport, validate

DEFAULT_TEMPERATURE = 0.07
MCQ_CANDIDATES = 5


def similarity_matrix(batch: EmbeddingBatch) -> np.ndarray:
    """Entry ``[i, j]`` is the dot product of video row i and text row j."""
    v, t = batch.video_embeddings, batch.text_embeddings
    if v.ndim != 2 or v.shape != t.shape:
        raise ValueError(f"embedding shapes differ: {v.shape} vs {t.shape}")
    return v @ t.T


def _log_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shift = x.max(axis=axis, keepdims=True)
    z = x - shift
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def info_nce_from_similarity(sim: np.ndarray, temperature: float) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the similarity matrix."""
    sim = np.asarray(sim, dtype=float)
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if not np.all(np.isfinite(sim)):
        raise ValueError("similarities must be finite")
    b = sim.shape[0]
    logits = sim / temperature
    row = np.diagonal(_log_softmax(logits, axis=1))
    col = np.diagonal(_log_softmax(logits, axis=0))
    loss = -(row.sum() + col.sum()) / b + 0.0  # avoid -0.0
    grad = (_softmax(logits, 1) + _softmax(logits, 0) - 2.0 * np.eye(b)) / (b * temperature)
    return float(loss), grad


def info_nce_loss(batch: EmbeddingBatch) -> LossReport:
    result = validate(batch)
    if not result.ok:
        raise ValueError("; ".join(str(v) for v in result.violations))
    loss, g = info_nce_from_similarity(similarity_matrix(batch), batch.temperature)
    return LossReport(
        loss=loss,
        gradient_video=g @ batch.text_embeddings,
        gradient_text=g.T @ batch.video_embeddings,
    )


# ---------------------------------------------------------------------------
# Retrieval metrics
# ---------------------------------------------------------------------------


def average_precision(relevance: Sequence[float]) -> float:
    """AP of one ranked list; nonzero entries count as relevant.

    >>> average_precision([0, 1])
    0.5
    """
    r = np.asarray(relevance) != 0
    hits = np.flatnonzero(r)
    if hits.size == 0:
        return 0.0
    precision_at_hits = np.arange(1, hits.size + 1) / (hits + 1)
    return float(precision_at_hits.mean())


@dataclass(frozen=True)
class MAPResult:
    value: float
    evaluated: int
    excluded: int


def mean_average_precision(rankings: Iterable[Sequence[float]]) -> MAPResult:
    """Mean AP over queries. Queries without any relevant item are excluded
    and counted in ``excluded``."""
    aps, excluded = [], 0
    for r in rankings:
        if not np.any(np.asarray(r) != 0):
            excluded += 1
            continue
        aps.append(average_precision(r))
    value = float(np.mean(aps)) if aps else 0.0
    return MAPResult(value, len(aps), excluded)


def dcg(gains: Sequence[float]) -> float:
    g = np.asarray(gains, dtype=float)
    return float(np.sum(g / np.log2(np.arange(2, g.size + 2))))


def ndcg(gains: Sequence[float], ideal: Sequence[float] | None = None) -> float:
    """DCG of the ranked ``gains`` over the DCG of ``ideal`` (default: the
    gains sorted descending). Zero when the ideal DCG is zero."""
    g = np.asarray(gains, dtype=float)
    if np.any(g < 0):
        raise ValueError("gains must be nonnegative")
    best = np.sort(g)[::-1] if ideal is None else np.asarray(ideal, dtype=float)
    idcg = dcg(best)
    return dcg(g) / idcg if idcg > 0 else 0.0


@dataclass(frozen=True)
class MCQQuestion:
    similarities: Sequence[float]
    answer: int
    group: str  # "intra" or "inter"


@dataclass(frozen=True)
class MCQResult:
    accuracy: dict[str, float]
    correct: dict[str, int]
    total: dict[str, int]


def mcq_predict(similarities: Sequence[float]) -> int:
    sims = np.asarray(similarities, dtype=float)
    if sims.shape != (MCQ_CANDIDATES,):
        raise ValueError(f"expected {MCQ_CANDIDATES} candidates, got {sims.size}")
    return int(np.argmax(sims))  # first maximum wins ties


def mcq_accuracy(questions: Iterable[MCQQuestion]) -> MCQResult:
    correct: dict[str, int] = {}
    total: dict[str, int] = {}
    for q in questions:
        hit = mcq_predict(q.similarities) == q.answer
        total[q.group] = total.get(q.group, 0) + 1
        correct[q.group] = correct.get(q.group, 0) + int(hit)
    acc = {g: correct[g] / total[g] for g in sorted(total)}
    return MCQResult(acc, dict(sorted(correct.items())), dict(sorted(total.items())))
