"""Brute-force ground truth and recall-item curves.

A model is anything with ``encode(X) -> codes`` and
``score(queries, codes) -> (nq, n)`` approximate inner products; every
quantizer in the package qualifies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import as_dataset
from .errors import DomainError

__all__ = [
    "RecallCurve",
    "top_ids",
    "brute_force_topk",
    "verify_ground_truth",
    "recall_at",
    "recall_curve",
    "default_checkpoints",
]

_BLOCK = 1 << 24


def top_ids(scores: np.ndarray, T: int) -> np.ndarray:
    """Ids of the ``T`` largest scores per row, descending, ties to the lower id.

    Uses a partial selection and only sorts the rows' candidates, which gives
    the same prefix as a full stable sort.
    """
    s = np.atleast_2d(scores)
    nq, n = s.shape
    T = min(T, n)
    out = np.empty((nq, T), dtype=np.int64)
    if T == 0:
        return out
    kth = np.partition(s, n - T, axis=1)[:, n - T]
    for i in range(nq):
        cand = np.flatnonzero(s[i] >= kth[i])
        order = np.lexsort((cand, -s[i, cand]))
        out[i] = cand[order[:T]]
    return out


def brute_force_topk(data, queries, k: int) -> np.ndarray:
    """Exact top-``k`` ids by inner product for every query, shape ``(nq, k)``."""
    X = as_dataset(data)
    Q = as_dataset(queries, X.shape[1])
    n = X.shape[0]
    if not 1 <= k <= n:
        raise DomainError(f"k={k} must lie in [1, n={n}]")
    out = np.empty((Q.shape[0], k), dtype=np.int64)
    step = max(1, _BLOCK // n)
    for s in range(0, Q.shape[0], step):
        out[s : s + step] = top_ids(Q[s : s + step] @ X.T, k)
    return out


def verify_ground_truth(data, queries, truth) -> bool:
    truth = np.asarray(truth)
    return bool(np.array_equal(brute_force_topk(data, queries, truth.shape[1]), truth))


def recall_at(ranked, truth) -> float:
    """``|ranked ∩ truth| / |truth|``."""
    truth = set(np.asarray(truth).ravel().tolist())
    if not truth:
        raise DomainError("empty ground truth")
    found = truth.intersection(np.asarray(ranked).ravel().tolist())
    return len(found) / len(truth)


def default_checkpoints(n: int) -> list[int]:
    """1, 2, 5, 10, 20, 50, ... capped at ``n`` (``n`` itself included)."""
    out, base = [], 1
    while True:
        for m in (1, 2, 5):
            t = m * base
            if t >= n:
                out.append(n)
                return out
            out.append(t)
        base *= 10


@dataclass
class RecallCurve:
    checkpoints: np.ndarray
    mean_recall: np.ndarray
    stddev: np.ndarray
    per_query: np.ndarray | None = None  # (nq, c) for a single run
    metadata: dict = field(default_factory=dict)

    def rows(self):
        for t, r, s in zip(self.checkpoints, self.mean_recall, self.stddev):
            yield int(t), float(r), float(s)


def recall_curve(model, data, queries, truth, checkpoints, codes=None, metadata=None) -> RecallCurve:
    """Mean recall of the true top-k within the first ``T`` items ranked by approximate inner product.

    Checkpoints larger than ``n`` are clamped to ``n``. ``data`` may be None
    when ``codes`` are given, e.g. for a stored index.
    """
    if data is None:
        if codes is None:
            raise DomainError("need the data or its codes")
        codes = np.asarray(codes)
        n = codes.shape[0]
        Q = as_dataset(queries, model.d)
    else:
        X = as_dataset(data)
        n = X.shape[0]
        Q = as_dataset(queries, X.shape[1])
    truth = np.asarray(truth, dtype=np.int64)
    if truth.shape[0] != Q.shape[0]:
        raise DomainError("ground truth and queries disagree on the number of queries")
    cps = np.minimum(np.asarray(sorted(set(int(t) for t in checkpoints))), n)
    if cps.size == 0 or cps.min() < 1:
        raise DomainError("checkpoints must be >= 1")
    if codes is None:
        codes = model.encode(X)
    t_max = int(cps.max())
    k = truth.shape[1]
    per_query = np.empty((Q.shape[0], cps.size))
    step = max(1, _BLOCK // (8 * n))
    for s in range(0, Q.shape[0], step):
        ranked = top_ids(model.score(Q[s : s + step], codes), t_max)
        for j in range(ranked.shape[0]):
            hit = np.isin(ranked[j], truth[s + j])
            per_query[s + j] = np.cumsum(hit)[cps - 1] / k
    return RecallCurve(
        checkpoints=cps,
        mean_recall=per_query.mean(axis=0),
        stddev=np.zeros(cps.size),
        per_query=per_query,
        metadata=dict(metadata or {}),
    )
