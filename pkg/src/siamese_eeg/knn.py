"""k-nearest-neighbour classification in embedding space.

Ordering rules, shared by every search path:

* neighbours are ranked by Euclidean distance, ties going to the reference
  inserted first;
* the class with most votes wins; a vote tie goes to the class whose
  nearest member ranks first, then to the smaller label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import RejectedInputError

DEFAULT_K = 5


def _distances(refs: np.ndarray, query: np.ndarray) -> np.ndarray:
    # one formula for every path so distance ties compare identically
    return np.sqrt(np.sum((refs - query) ** 2, axis=-1))


def vote(labels, distances) -> int:
    """Majority label among neighbours with the given distances."""
    counts: dict[int, int] = {}
    nearest: dict[int, float] = {}
    for lab, d in zip(labels, distances):
        lab = int(lab)
        counts[lab] = counts.get(lab, 0) + 1
        nearest[lab] = min(nearest.get(lab, np.inf), float(d))
    return min(counts, key=lambda c: (-counts[c], nearest[c], c))


@dataclass(frozen=True)
class EmbeddingIndex:
    embeddings: np.ndarray
    labels: np.ndarray
    k: int = DEFAULT_K

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if emb.ndim != 2 or len(emb) == 0:
            raise RejectedInputError("index needs a non-empty (n, dim) embedding matrix")
        if len(labels) != len(emb):
            raise RejectedInputError("embeddings and labels differ in length")
        if not 1 <= self.k <= len(emb):
            raise RejectedInputError(f"k={self.k} must lie in [1, {len(emb)}]")
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "labels", labels)

    def neighbours(self, query) -> tuple[np.ndarray, np.ndarray]:
        """Indices and distances of the ``k`` nearest references, nearest first."""
        q = self._query(query)
        d = _distances(self.embeddings, q)
        order = np.argsort(d, kind="stable")[:self.k]
        return order, d[order]

    def _query(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        if q.shape != self.embeddings.shape[1:]:
            raise RejectedInputError(f"query shape {q.shape} != {self.embeddings.shape[1:]}")
        return q


def build_index(embeddings, labels, k: int = DEFAULT_K) -> EmbeddingIndex:
    return EmbeddingIndex(embeddings, labels, k)


def knn_predict(index: EmbeddingIndex, query) -> int:
    nb, d = index.neighbours(query)
    return vote(index.labels[nb], d)


def knn_predict_batch(index: EmbeddingIndex, queries) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float64)
    if len(queries) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.array([knn_predict(index, q) for q in queries], dtype=np.int64)


class KDTreeIndex:
    """KD-tree accelerated search returning exactly the brute-force neighbours.

    The tree proposes every reference within the k-th tree distance (plus a
    relative slack for rounding); candidates are then re-ranked with the
    brute-force distance formula and insertion-order tie breaking.
    """

    SLACK = 1e-9

    def __init__(self, index: EmbeddingIndex):
        self.index = index
        self._tree = cKDTree(index.embeddings)

    def neighbours(self, query) -> tuple[np.ndarray, np.ndarray]:
        idx = self.index
        q = idx._query(query)
        dk, _ = self._tree.query(q, k=idx.k)
        radius = float(np.max(np.atleast_1d(dk)))
        radius = radius * (1.0 + self.SLACK) + self.SLACK
        cand = np.array(sorted(self._tree.query_ball_point(q, radius)), dtype=np.int64)
        d = _distances(idx.embeddings[cand], q)
        order = np.argsort(d, kind="stable")[:idx.k]
        return cand[order], d[order]

    def predict(self, query) -> int:
        nb, d = self.neighbours(query)
        return vote(self.index.labels[nb], d)

    def predict_batch(self, queries) -> np.ndarray:
        queries = np.asarray(queries, dtype=np.float64)
        return np.array([self.predict(q) for q in queries], dtype=np.int64)
