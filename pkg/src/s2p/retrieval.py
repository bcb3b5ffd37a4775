"""Context selection: cosine relevance plus greedy diversity re-ranking.

Selection balances two pulls: how similar a stored sample is to the live
query, and how redundant it is with samples already picked. Each round
picks the candidate maximizing

    lam * sim(s, query) - (1 - lam) * max over chosen c of sim(s, c)

with the diversity term defined as 0 while nothing is chosen yet. Ties
break on ascending sample id so selection is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import Frame, RunConfig, Setup
from .errors import DimMismatchError, EmptyMemoryError, KTooLargeError
from .memory import Embedder, ExperienceSample, MemoryStore, make_embedder


@dataclass(frozen=True)
class RankedSample:
    """Selection record for one picked sample."""

    sample_id: str
    relevance: float  # cosine to the query, in [-1, 1]
    mmr_score: float  # score at the round it was picked


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of unit-norm vectors; raises on dimension mismatch."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatchError(f"cosine on shapes {a.shape} vs {b.shape}")
    return float(a @ b)


MemoryLike = Union[MemoryStore, Sequence[ExperienceSample]]


def _samples_of(memory: MemoryLike) -> list[ExperienceSample]:
    if isinstance(memory, MemoryStore):
        return list(memory.samples)
    return list(memory)


def mmr_rank(query: np.ndarray, memory: MemoryLike, k: int,
             lam: float) -> list[tuple[ExperienceSample, RankedSample]]:
    """Greedy selection; returns picks in order with their scores."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam} outside [0, 1]")
    samples = _samples_of(memory)
    if k == 0:
        return []
    if not samples:
        raise EmptyMemoryError("selection from an empty memory")
    if k > len(samples):
        raise KTooLargeError(f"k={k} > memory size {len(samples)}")

    # Candidates in ascending-id order; argmax keeps the first of a tie.
    order = sorted(range(len(samples)), key=lambda i: samples[i].id)
    relevance = {i: cosine(samples[i].embedding, query) for i in order}
    chosen: set[int] = set()
    result: list[tuple[ExperienceSample, RankedSample]] = []
    # Absent entry means nothing is chosen yet; the penalty term is then
    # 0 by definition. Once populated the max can be negative, which
    # must not be clamped away.
    max_sim_to_chosen: dict[int, float] = {}

    for _ in range(k):
        best_i: Optional[int] = None
        best_score = -np.inf
        for i in order:
            if i in chosen:
                continue
            score = lam * relevance[i] - (1.0 - lam) * max_sim_to_chosen.get(i, 0.0)
            if score > best_score:
                best_score = score
                best_i = i
        assert best_i is not None
        chosen.add(best_i)
        result.append((
            samples[best_i],
            RankedSample(sample_id=samples[best_i].id,
                         relevance=relevance[best_i],
                         mmr_score=best_score),
        ))
        for i in order:
            if i in chosen:
                continue
            sim = cosine(samples[i].embedding, samples[best_i].embedding)
            prev = max_sim_to_chosen.get(i)
            if prev is None or sim > prev:
                max_sim_to_chosen[i] = sim
    return result


def mmr_select(query: np.ndarray, memory: MemoryLike, k: int,
               lam: float) -> list[ExperienceSample]:
    """Select k diverse, relevant samples; picks in selection order."""
    return [sample for sample, _ in mmr_rank(query, memory, k, lam)]


def top_k_by_relevance(query: np.ndarray, memory: MemoryLike,
                       k: int) -> list[ExperienceSample]:
    """Plain similarity ranking (what lambda = 1 collapses to)."""
    samples = _samples_of(memory)
    ranked = sorted(samples,
                    key=lambda s: (-cosine(s.embedding, query), s.id))
    return ranked[:k]


def build_context(live: Frame, setup: Setup, memory: MemoryStore,
                  cfg: RunConfig, embedder: Optional[Embedder] = None,
                  predicate: Optional[Callable[[ExperienceSample], bool]] = None,
                  ) -> list[ExperienceSample]:
    """Embed the live frame and pick cfg.k_icl context samples.

    Only samples whose setup matches the live frame are eligible;
    `predicate` narrows further (e.g. to one provenance scenario). k is
    clamped to the eligible pool, so k_icl=0 gives zero-shot mode.
    """
    embedder = embedder or make_embedder(cfg.embedder)
    memory.require_embedder(embedder)
    eligible = [s for s in memory.samples if s.setup == setup]
    if predicate is not None:
        eligible = [s for s in eligible if predicate(s)]
    k = min(cfg.k_icl, len(eligible))
    if k == 0:
        return []
    query = embedder.embed(live)
    return mmr_select(query, eligible, k, cfg.lam)
