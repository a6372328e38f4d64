"""Candidate reference retrieval by global-descriptor cosine similarity.

The global descriptor is opaque to the engine (any image-level embedding
works); retrieval noise is expected and tolerated downstream, so no
relevance threshold is applied here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .index import InvertedIndex


@dataclass(frozen=True)
class RetrievalResult:
    """(image_id, similarity) pairs, best first; ties by ascending image_id."""

    ranked: tuple[tuple[str, float], ...]

    def image_ids(self) -> list[str]:
        return [image_id for image_id, _ in self.ranked]


def _unit(v: np.ndarray) -> np.ndarray | None:
    norm = float(np.sqrt(np.sum(v * v)))
    if norm == 0.0:
        return None
    return v / norm


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    ua, ub = _unit(np.asarray(a, np.float64)), _unit(np.asarray(b, np.float64))
    if ua is None or ub is None:
        return 0.0
    return float(np.dot(ua, ub))


def rank_references(query_global, idx: InvertedIndex, n: int = 40) -> RetrievalResult:
    """Top-n reference images by cosine similarity to the query's global
    descriptor; zero-norm vectors score 0."""
    if n < 1:
        raise DataError("n must be >= 1")
    if not idx.images:
        raise DataError("index is empty")
    q = np.asarray(query_global, dtype=np.float64)
    scored = []
    for image_id in idx.images:
        g = idx.images[image_id].global_desc
        if g.shape != q.shape:
            raise DataError(
                f"global descriptor dimension mismatch: query {q.shape[0]}, "
                f"image {image_id!r} has {g.shape[0]}"
            )
        scored.append((image_id, cosine_similarity(q, g)))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return RetrievalResult(tuple(scored[:n]))
