"""Exact top-K retrieval by inner product over a frozen caption store.

The scan is a flat full scan: every stored vector is scored against the
query. Scores accumulate in float64 even though vectors are stored as
float32, which keeps golden tests free of platform summation drift. Ties
are broken by ascending entry id so results are fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BatchQueryError, DimensionMismatchError, EmptyStoreError, FrozenStoreError
from .store import CaptionStore, Embedding

# A query is expected to arrive unit-normalized; allow float32 rounding slack.
_QUERY_NORM_TOLERANCE = 1e-3


@dataclass(frozen=True, slots=True)
class RetrievalHit:
    """One retrieved entry: datastore id, inner-product score, 0-based rank."""

    entry_id: int
    score: float
    rank: int


def _query_vector(store: CaptionStore, query) -> np.ndarray:
    values = query.values if isinstance(query, Embedding) else np.asarray(query)
    q = np.asarray(values, dtype=np.float64).reshape(-1)
    if q.shape[0] != store.dimension:
        raise DimensionMismatchError(
            f"query has dimension {q.shape[0]}, store expects {store.dimension}"
        )
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > _QUERY_NORM_TOLERANCE:
        raise ValueError(f"query must be unit-normalized (norm {norm:.6f})")
    return q


def top_k(store: CaptionStore, query, k: int) -> list[RetrievalHit]:
    """Return the k highest-inner-product entries, score desc then id asc."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not store.frozen:
        raise FrozenStoreError("store must be frozen before searching")
    n = store.count
    if n == 0:
        raise EmptyStoreError("cannot search an empty store")
    q = _query_vector(store, query)

    scores = store.scoring_matrix @ q
    k_eff = min(k, n)
    if k_eff == n:
        chosen = np.arange(n)
    else:
        part = np.argpartition(-scores, k_eff - 1)
        threshold = scores[part[k_eff - 1]]
        greater = np.flatnonzero(scores > threshold)
        tied = np.flatnonzero(scores == threshold)
        chosen = np.concatenate([greater, tied[: k_eff - greater.size]])
    # lexsort: primary key score descending, secondary key entry id ascending
    order = np.lexsort((chosen, -scores[chosen]))
    chosen = chosen[order]
    return [
        RetrievalHit(entry_id=int(i), score=float(scores[i]), rank=rank)
        for rank, i in enumerate(chosen)
    ]


def top_k_batch(store: CaptionStore, queries: Sequence, k: int) -> list[list[RetrievalHit]]:
    """Elementwise top_k over a list of queries; output order matches input."""
    results = []
    for index, query in enumerate(queries):
        try:
            results.append(top_k(store, query, k))
        except Exception as exc:
            raise BatchQueryError(index, exc) from exc
    return results
