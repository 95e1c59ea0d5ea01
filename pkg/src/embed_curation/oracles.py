"""Independent brute-force references and the self-check suites behind
``embed verify``.

Everything here is written with plain loops and exhaustive enumeration so it
shares no code path with the vectorized implementations it checks.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from . import verification as V
from .core import EmbeddingBatch


def naive_similarity(video: Sequence[Sequence[float]], text: Sequence[Sequence[float]]) -> list[list[float]]:
    b, d = len(video), len(video[0])
    out = [[0.0] * b for _ in range(b)]
    for i in range(b):
        for j in range(b):
            acc = 0.0
            for k in range(d):
                acc += video[i][k] * text[j][k]
            out[i][j] = acc
    return out


def naive_info_nce(sim: Sequence[Sequence[float]], temperature: float) -> float:
    b = len(sim)
    total = 0.0
    for i in range(b):
        row = [sim[i][j] / temperature for j in range(b)]
        col = [sim[k][i] / temperature for k in range(b)]
        m_r, m_c = max(row), max(col)
        lse_r = m_r + math.log(math.fsum(math.exp(x - m_r) for x in row))
        lse_c = m_c + math.log(math.fsum(math.exp(x - m_c) for x in col))
        total += (sim[i][i] / temperature - lse_r) + (sim[i][i] / temperature - lse_c)
    return -total / b


def finite_difference_grads(batch: EmbeddingBatch, h: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of the loss with respect to both embedding matrices."""
    grads = []
    for which in ("video", "text"):
        base_v = batch.video_embeddings.copy()
        base_t = batch.text_embeddings.copy()
        target = base_v if which == "video" else base_t
        g = np.zeros_like(target)
        for idx in np.ndindex(target.shape):
            orig = target[idx]
            target[idx] = orig + h
            up = naive_info_nce(naive_similarity(base_v, base_t), batch.temperature)
            target[idx] = orig - h
            down = naive_info_nce(naive_similarity(base_v, base_t), batch.temperature)
            target[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads[0], grads[1]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def brute_average_precision(relevance: Sequence[float]) -> float:
    """AP as the mean, over relevant items, of the fraction of items ranked
    at or above it that are relevant, counted pairwise."""
    rel = [i for i, r in enumerate(relevance) if r != 0]
    if not rel:
        return 0.0
    total = 0.0
    for i in rel:
        above = sum(1 for j in rel if j <= i)
        total += above / (i + 1)
    return total / len(rel)


def distinct_orderings(items: Sequence[float]):
    """Every distinct ordering of a multiset, each produced once."""
    counts: dict[float, int] = {}
    for x in items:
        counts[x] = counts.get(x, 0) + 1
    keys = list(counts)
    prefix: list[float] = []

    def rec():
        if len(prefix) == len(items):
            yield tuple(prefix)
            return
        for k in keys:
            if counts[k]:
                counts[k] -= 1
                prefix.append(k)
                yield from rec()
                prefix.pop()
                counts[k] += 1

    yield from rec()


def brute_ndcg(gains: Sequence[float]) -> float:
    """nDCG with the ideal DCG found by trying every ordering."""

    def dcg(seq):
        return sum(g / math.log2(pos + 2) for pos, g in enumerate(seq))

    best = max(dcg(p) for p in distinct_orderings(gains))
    return dcg(gains) / best if best > 0 else 0.0


def brute_mcq(questions: Sequence[V.MCQQuestion]) -> dict[str, float]:
    hits: dict[str, list[int]] = {}
    for q in questions:
        sims = list(q.similarities)
        best = 0
        for i in range(1, len(sims)):
            if sims[i] > sims[best]:
                best = i
        hits.setdefault(q.group, []).append(int(best == q.answer))
    return {g: sum(h) / len(h) for g, h in sorted(hits.items())}


def all_relevance_lists(max_items: int = 8) -> list[tuple[int, ...]]:
    return [
        bits
        for n in range(1, max_items + 1)
        for bits in itertools.product((0, 1), repeat=n)
    ]


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    max_error: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<44} max_err={self.max_error:.3e}  tol={self.tolerance:.0e}"


def random_batch(rng: np.random.Generator, b: int = 8, d: int = 16, temperature: float = 0.07) -> EmbeddingBatch:
    """Row-normalized Gaussian embeddings, as produced by a projection head."""
    v = rng.normal(size=(b, d))
    t = rng.normal(size=(b, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    return EmbeddingBatch(v, t, temperature)


def infonce_suite(seed: int = 0, trials: int = 3) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = []

    one = V.info_nce_loss(EmbeddingBatch(rng.normal(size=(1, 4)), rng.normal(size=(1, 4)), 0.07))
    checks.append(Check("B=1 loss is exactly 0", one.loss == 0.0, abs(one.loss), 0.0))

    two = V.info_nce_loss(EmbeddingBatch([[10.0], [-10.0]], [[1.0], [-1.0]], 1.0))
    expected = 2 * math.log1p(math.exp(-20))
    err = abs(two.loss - expected)
    checks.append(Check("2x2 worked case vs closed form", err <= 1e-12, err, 1e-12))

    sim_err = grad_err = loss_err = 0.0
    for _ in range(trials):
        batch = random_batch(rng)
        s = V.similarity_matrix(batch)
        sim_err = max(sim_err, float(np.max(np.abs(s - np.array(naive_similarity(batch.video_embeddings.tolist(), batch.text_embeddings.tolist()))))))
        rep = V.info_nce_loss(batch)
        loss_err = max(loss_err, abs(rep.loss - naive_info_nce(s.tolist(), batch.temperature)))
        fd_v, fd_t = finite_difference_grads(batch)
        grad_err = max(grad_err, relative_error(rep.gradient_video, fd_v), relative_error(rep.gradient_text, fd_t))
    checks.append(Check("similarity vs triple loop", sim_err <= 1e-12, sim_err, 1e-12))
    checks.append(Check("loss vs scalar reference", loss_err <= 1e-10, loss_err, 1e-10))
    checks.append(Check("gradient vs central differences", grad_err < 1e-5, grad_err, 1e-5))

    perm_err = shift_err = 0.0
    for _ in range(trials):
        batch = random_batch(rng)
        base = V.info_nce_loss(batch).loss
        p = rng.permutation(8)
        permuted = EmbeddingBatch(batch.video_embeddings[p], batch.text_embeddings[p], batch.temperature)
        perm_err = max(perm_err, abs(V.info_nce_loss(permuted).loss - base))
        s = V.similarity_matrix(batch)
        shifted, _ = V.info_nce_from_similarity(s + 3.7, batch.temperature)
        shift_err = max(shift_err, abs(shifted - base))
    checks.append(Check("row-permutation invariance", perm_err <= 1e-10, perm_err, 1e-10))
    checks.append(Check("softmax shift invariance", shift_err <= 1e-10, shift_err, 1e-10))
    return checks


def metrics_suite(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    lists = all_relevance_lists(8)
    ap_err = max(abs(V.average_precision(r) - brute_average_precision(r)) for r in lists)
    checks = [Check(f"AP over all {len(lists)} binary lists", ap_err <= 1e-9, ap_err, 1e-9)]

    nd_err = 0.0
    for r in lists:
        if len(r) <= 6:
            nd_err = max(nd_err, abs(V.ndcg(r) - brute_ndcg(r)))
    for _ in range(30):
        g = rng.integers(0, 4, int(rng.integers(1, 9))).tolist()
        nd_err = max(nd_err, abs(V.ndcg(g) - brute_ndcg(g)))
    checks.append(Check("nDCG vs exhaustive ideal ordering", nd_err <= 1e-9, nd_err, 1e-9))

    qs = [
        V.MCQQuestion(
            rng.integers(0, 4, 5).astype(float).tolist(),
            int(rng.integers(0, 5)),
            "intra" if rng.uniform() < 0.5 else "inter",
        )
        for _ in range(1000)
    ]
    got = V.mcq_accuracy(qs).accuracy
    ref = brute_mcq(qs)
    mcq_err = max(abs(got[g] - ref[g]) for g in ref)
    checks.append(Check("MCQ accuracy vs recount", got == ref, mcq_err, 0.0))
    return checks


def run_suite(name: str = "all", seed: int = 0) -> list[Check]:
    if name == "infonce":
        return infonce_suite(seed)
    if name == "metrics":
        return metrics_suite(seed)
    if name == "all":
        return infonce_suite(seed) + metrics_suite(seed)
    raise ValueError(f"unknown suite {name!r}")
