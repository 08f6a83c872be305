"""Nearest-neighbor and CSLS retrieval of mapped source vectors.

CSLS (cross-domain similarity local scaling) scores a pair as
``2 cos(x, y) - r_T(x) - r_S(y)`` where ``r_T(x)`` is the mean cosine of ``x``
to its ``neighborhood`` nearest targets and ``r_S(y)`` the mean cosine of
``y`` to its nearest mapped sources.  It demotes hubs.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DomainError, ShapeError

BLOCK_ROWS = 4096


@dataclass
class PairDictionary:
    """Ground truth: source row id -> set of acceptable target row ids."""

    entries: dict[int, set[int]] = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "PairDictionary":
        entries: dict[int, set[int]] = {}
        for s, t in pairs:
            entries.setdefault(int(s), set()).add(int(t))
        return cls(entries)

    @classmethod
    def identity(cls, n: int) -> "PairDictionary":
        return cls({i: {i} for i in range(n)})

    def __len__(self):
        return len(self.entries)

    def validate(self, n_sources: int, n_targets: int) -> None:
        for s, targets in self.entries.items():
            if not 0 <= s < n_sources:
                raise DataError(f"dictionary source id {s} not in the source embeddings")
            for t in targets:
                if not 0 <= t < n_targets:
                    raise DataError(f"dictionary target id {t} (for source {s}) not in the target embeddings")


@dataclass
class RetrievalReport:
    method: str
    precision: dict[int, float]
    pairs: int
    neighborhood: int

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["precision"] = {str(k): v for k, v in self.precision.items()}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RetrievalReport":
        return cls(doc["method"], {int(k): v for k, v in doc["precision"].items()},
                   doc["pairs"], doc["neighborhood"])

    CSV_FIELDS = ("method", "k", "precision", "pairs")

    def csv_rows(self) -> list[list]:
        return [[self.method, k, repr(p), self.pairs] for k, p in sorted(self.precision.items())]


def _normalize(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("zero-norm vector in retrieval")
    return m / norms


def _ranked(scores: np.ndarray, k: int) -> np.ndarray:
    # stable sort on negated scores keeps ascending ids among ties
    return np.argsort(-scores, kind="stable")[:k]


def nn_topk(query, targets, k: int) -> np.ndarray:
    """Ids of the ``k`` targets with the largest cosine to ``query``."""
    if k <= 0:
        raise DomainError("k must be positive")
    t = _normalize(targets)
    if k > len(t):
        raise DomainError(f"k={k} exceeds {len(t)} targets")
    q = _normalize(query)[0]
    if q.shape[0] != t.shape[1]:
        raise ShapeError("query and targets differ in dimension")
    return _ranked(t @ q, k)


def mean_topk_similarity(queries: np.ndarray, pool: np.ndarray, k: int) -> np.ndarray:
    """Mean of each (unit) query's ``k`` largest cosines against a (unit) pool."""
    out = np.empty(len(queries))
    for start in range(0, len(queries), BLOCK_ROWS):
        sims = queries[start:start + BLOCK_ROWS] @ pool.T
        top = np.partition(sims, sims.shape[1] - k, axis=1)[:, -k:]
        out[start:start + BLOCK_ROWS] = top.mean(axis=1)
    return out


class CslsScorer:
    """Caches both neighborhood terms for one (mapped sources, targets) pair."""

    def __init__(self, mapped_sources, targets, neighborhood: int = 10):
        if neighborhood <= 0:
            raise DomainError("CSLS neighborhood must be positive")
        self.sources = _normalize(mapped_sources)
        self.targets = _normalize(targets)
        if self.sources.shape[1] != self.targets.shape[1]:
            raise ShapeError("mapped sources and targets differ in dimension")
        if neighborhood > min(len(self.sources), len(self.targets)):
            raise DomainError("neighborhood exceeds the number of rows on one side")
        self.neighborhood = neighborhood
        self.r_target = mean_topk_similarity(self.sources, self.targets, neighborhood)
        self.r_source = mean_topk_similarity(self.targets, self.sources, neighborhood)

    def scores(self, query_id: int) -> np.ndarray:
        cos = self.targets @ self.sources[query_id]
        return 2.0 * cos - self.r_target[query_id] - self.r_source

    def topk(self, query_id: int, k: int) -> np.ndarray:
        if k <= 0:
            raise DomainError("k must be positive")
        if k > len(self.targets):
            raise DomainError(f"k={k} exceeds {len(self.targets)} targets")
        return _ranked(self.scores(query_id), k)


def csls_topk(query_id: int, mapped_sources, targets, k: int, neighborhood: int = 10) -> np.ndarray:
    return CslsScorer(mapped_sources, targets, neighborhood).topk(query_id, k)


def precision_at_k(
    mapped_sources,
    targets,
    dictionary: PairDictionary,
    method: str = "nn",
    ks: Sequence[int] = (1, 5, 10),
    neighborhood: int = 10,
) -> RetrievalReport:
    """Fraction of dictionary sources whose top-K contains an acceptable target."""
    method = method.lower()
    if method not in ("nn", "csls"):
        raise DomainError(f"unknown retrieval method {method!r}")
    if len(dictionary) == 0:
        raise DomainError("empty dictionary")
    src = _normalize(mapped_sources)
    tgt = _normalize(targets)
    dictionary.validate(len(src), len(tgt))
    ks = sorted(set(int(k) for k in ks))
    if ks[0] <= 0 or ks[-1] > len(tgt):
        raise DomainError(f"every K must lie in [1, {len(tgt)}]")
    kmax = ks[-1]

    query_ids = np.array(sorted(dictionary.entries), dtype=np.int64)
    if method == "csls":
        scorer = CslsScorer(src, tgt, neighborhood)
    hits = np.zeros(len(ks))
    for start in range(0, len(query_ids), BLOCK_ROWS):
        ids = query_ids[start:start + BLOCK_ROWS]
        scores = src[ids] @ tgt.T
        if method == "csls":
            scores = 2.0 * scores - scorer.r_target[ids][:, None] - scorer.r_source[None, :]
        top = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
        for row, qid in enumerate(ids):
            good = dictionary.entries[int(qid)]
            first = next((rank for rank, t in enumerate(top[row]) if int(t) in good), None)
            if first is not None:
                hits += np.array([first < k for k in ks])
    n = len(query_ids)
    return RetrievalReport(
        "CSLS" if method == "csls" else "NN",
        {k: float(h / n) for k, h in zip(ks, hits)},
        n,
        neighborhood if method == "csls" else 0,
    )
