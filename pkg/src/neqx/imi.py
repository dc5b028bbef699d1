"""Inverted multi-index (IMI) over two codebooks for inner-product candidate generation.

Items are bucketed by their pair of codeword indexes ``(i, j)``. A query
visits buckets best-first with the multi-sequence algorithm: both codebooks
are sorted by their contribution to the cell score and a priority queue holds
the frontier of the visited staircase, so only ``O(sqrt(t))`` cells are queued
after ``t`` emissions.

The VQ variant scores a cell by ``q.c1[i] + q.c2[j]``. The NEQ variant uses a
scalar norm codebook ``l`` and unit direction codebook ``c`` and scores
``l[i] * q.c[j]``. Since the product is only monotone in ``l`` for a fixed
sign of ``q.c[j]``, directions with a negative inner product form a second
multi-index (norms ascending) that is visited only after the first one is
exhausted.

Equal cell scores are emitted in row-major order ``(i, j)``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .clustering import DEFAULT_MAX_ITERS, DEFAULT_TOL, scalar_kmeans, spherical_kmeans
from .data import as_dataset, decompose
from .errors import DomainError
from .evaluation import top_ids
from .vq import sub_seed, to_f32, train_rq

__all__ = [
    "MultiIndex",
    "Traversal",
    "build_imi",
    "train_vq_imi",
    "train_neq_imi",
    "traverse_vq",
    "traverse_neq",
    "candidate_rerank",
]

_UNIT_TOL = 1e-6


@dataclass(eq=False)
class MultiIndex:
    kind: str  # "vq" or "neq"
    K1: int
    K2: int
    offsets: np.ndarray  # (K1*K2 + 1,) CSR offsets, cell (i, j) is row i*K2 + j
    ids: np.ndarray  # item ids grouped by cell, ascending within a cell
    first: np.ndarray | None = None  # vq: (K1, d) codebook; neq: (K1,) norm codewords
    second: np.ndarray | None = None  # (K2, d); unit rows for neq
    l_max: np.ndarray | None = None  # neq: largest item norm per norm cluster
    l_min: np.ndarray | None = None  # neq: smallest item norm per norm cluster
    radius: np.ndarray | None = None  # neq: largest angle between a member and its direction codeword

    @property
    def n(self) -> int:
        return int(self.ids.size)

    def cell(self, i: int, j: int) -> np.ndarray:
        r = i * self.K2 + j
        return self.ids[self.offsets[r] : self.offsets[r + 1]]

    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets).reshape(self.K1, self.K2)


@dataclass
class Traversal:
    ids: np.ndarray  # gathered item ids in cell order
    cells: list = field(default_factory=list)  # emitted (i, j)
    scores: list = field(default_factory=list)  # cell score of each emission
    phases: list = field(default_factory=list)  # 1 or 2 (vq: always 1)
    frontier: list = field(default_factory=list)  # queue size after each emission
    exhausted: bool = False
    stopped_early: bool = False


def build_imi(codes, K, kind: str = "vq", *, first=None, second=None,
              l_max=None, l_min=None, radius=None) -> MultiIndex:
    """Posting lists for ``(n, 2)`` codes; ``K`` is one size or a pair ``(K1, K2)``."""
    if kind not in ("vq", "neq"):
        raise DomainError(f"unknown index kind {kind!r}")
    c = np.asarray(codes, dtype=np.int64)
    if c.size == 0:
        c = c.reshape(0, 2)
    if c.ndim != 2 or c.shape[1] != 2:
        raise DomainError(f"every item needs exactly 2 indexes, got shape {c.shape}")
    K1, K2 = (K, K) if np.isscalar(K) else (int(K[0]), int(K[1]))
    for col, k in ((0, K1), (1, K2)):
        if c.shape[0] and (c[:, col].min() < 0 or c[:, col].max() >= k):
            raise DomainError(f"index out of range [0, {k}) in column {col}")
    row = c[:, 0] * K2 + c[:, 1]
    ids = np.argsort(row, kind="stable")
    offsets = np.zeros(K1 * K2 + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(np.bincount(row, minlength=K1 * K2))
    if kind == "neq" and first is not None and np.any(np.asarray(first) < 0):
        raise DomainError("norm codewords must be non-negative")
    return MultiIndex(kind, K1, K2, offsets, ids, first, second, l_max, l_min, radius)


def train_vq_imi(data, K: int, *, seed: int = 0, max_iters: int = DEFAULT_MAX_ITERS,
                 tol: float = DEFAULT_TOL) -> MultiIndex:
    """Two-level residual quantizer over the full dimension as a VQ multi-index."""
    X = as_dataset(data)
    model = train_rq(X, 2, K, max_iters=max_iters, tol=tol, seed=seed)
    codes = model.encode(X)
    return build_imi(codes, K, "vq", first=model.codebooks[0], second=model.codebooks[1])


def train_neq_imi(data, K: int, *, seed: int = 0, max_iters: int = DEFAULT_MAX_ITERS,
                  tol: float = DEFAULT_TOL) -> MultiIndex:
    """Norm codebook from scalar k-means and unit directions from spherical k-means."""
    X = as_dataset(data)
    norms, dirs, zero = decompose(X)
    live = np.setdiff1d(np.arange(X.shape[0]), zero)
    if live.size == 0:
        raise DomainError("no non-zero items to index")
    sk = spherical_kmeans(dirs[live], K, max_iters=max_iters, tol=tol, seed=sub_seed(seed, "imi-dir"))
    C = to_f32(sk.centroids)
    C = C / np.linalg.norm(C, axis=1, keepdims=True)
    nk = scalar_kmeans(norms, K, max_iters=max_iters, tol=tol, seed=sub_seed(seed, "imi-norm"))
    L = nk.centroids[:, 0]
    ni = np.argmin(np.abs(norms[:, None] - L[None, :]), axis=1)
    dj = np.argmax(dirs @ C.T, axis=1)
    # zero items point nowhere; put them in direction cell 0, their inner product is 0 anyway
    dj[zero] = 0
    l_max = np.zeros(K)
    l_min = np.full(K, np.inf)
    np.maximum.at(l_max, ni, norms)
    np.minimum.at(l_min, ni, norms)
    l_min[~np.isfinite(l_min)] = 0.0
    cosines = np.clip(np.einsum("ij,ij->i", dirs[live], C[dj[live]]), -1.0, 1.0)
    radius = np.zeros(K)
    np.maximum.at(radius, dj[live], np.arccos(cosines))
    return build_imi(np.stack([ni, dj], axis=1), K, "neq", first=L, second=C,
                     l_max=l_max, l_min=l_min, radius=radius)


class _Staircase:
    """Multi-sequence enumeration of a ``rows x cols`` grid in non-increasing score order.

    ``rows``/``cols`` are original codeword indexes sorted so that the score is
    non-increasing along each axis, with equal values in ascending index order.
    A cell is queued once both of its predecessors have been emitted.
    """

    def __init__(self, rows, cols, score):
        self.rows, self.cols, self.score = rows, cols, score
        self.done = set()
        self.heap = []
        if len(rows) and len(cols):
            self._push(0, 0)

    def _push(self, a, b):
        i, j = int(self.rows[a]), int(self.cols[b])
        heapq.heappush(self.heap, (-self.score(i, j), i, j, a, b))

    def __len__(self):
        return len(self.heap)

    def pop(self):
        neg, i, j, a, b = heapq.heappop(self.heap)
        self.done.add((a, b))
        if a + 1 < len(self.rows) and (b == 0 or (a + 1, b - 1) in self.done):
            self._push(a + 1, b)
        if b + 1 < len(self.cols) and (a == 0 or (a - 1, b + 1) in self.done):
            self._push(a, b + 1)
        return i, j, -neg


def _order(values, descending: bool) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.lexsort((np.arange(v.size), -v if descending else v))


def _limit(index: MultiIndex, T) -> float:
    # no budget: visit every cell, empty ones included
    return math.inf if T is None else min(int(T), index.n)


def traverse_vq(index: MultiIndex, q, T=None) -> Traversal:
    """Visit VQ cells best-first until ``T`` items are gathered (``None``: every cell)."""
    if index.kind != "vq":
        raise DomainError("traverse_vq needs a vq index")
    q = np.asarray(q, dtype=np.float64).ravel()
    a = np.asarray(index.first) @ q
    b = np.asarray(index.second) @ q
    stair = _Staircase(_order(a, True), _order(b, True), lambda i, j: a[i] + b[j])
    return _run([(1, stair)], index, _limit(index, T))


def _run(phases, index, budget, stop=None) -> Traversal:
    out = Traversal(ids=np.empty(0, dtype=np.int64))
    parts, gathered, t = [], 0, 0
    for phase, stair in phases:
        if callable(stair):
            stair = stair()
        while len(stair) and gathered < budget:
            i, j, s = stair.pop()
            t += 1
            out.cells.append((i, j))
            out.scores.append(s)
            out.phases.append(phase)
            out.frontier.append(len(stair))
            members = index.cell(i, j)
            parts.append(members)
            gathered += members.size
            if stop is not None and stop(i, j, members):
                out.stopped_early = True
                break
        if out.stopped_early or gathered >= budget:
            break
    out.ids = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    out.exhausted = len(out.cells) == index.K1 * index.K2
    return out


def _direction_bound(index: MultiIndex, q: np.ndarray) -> np.ndarray:
    """Largest ``q.u`` over unit directions ``u`` within each cluster's angular radius."""
    qn = float(np.linalg.norm(q))
    if qn == 0:
        return np.zeros(index.K2)
    ang = np.arccos(np.clip(index.second @ q / qn, -1.0, 1.0))
    return qn * np.cos(np.maximum(ang - index.radius, 0.0))


def traverse_neq(index: MultiIndex, q, T=None, k: int | None = None, data=None) -> Traversal:
    """Two-phase best-first traversal of an NEQ multi-index.

    With ``k`` and ``data`` given, stops as soon as the ``k``-th largest exact
    inner product gathered so far beats an upper bound on every item in the
    cells not yet visited. The bound per cell is the cluster's largest (or,
    for a negative direction bound, smallest) item norm times the best
    inner product any unit vector within the direction cluster's angular
    radius can reach; it needs unit direction codewords.
    """
    if index.kind != "neq":
        raise DomainError("traverse_neq needs an neq index")
    q = np.asarray(q, dtype=np.float64).ravel()
    L = np.asarray(index.first, dtype=np.float64)
    p = np.asarray(index.second) @ q
    pos = np.flatnonzero(p >= 0)
    neg = np.flatnonzero(p < 0)

    def stair(cols, norm_desc):
        rows = _order(L, norm_desc)
        return _Staircase(rows, cols[_order(p[cols], True)], lambda i, j: L[i] * p[j])

    stop = None
    if k is not None and data is not None:
        stop = _early_stop(index, q, int(k), as_dataset(data))
    phases = [(1, stair(pos, True)), (2, lambda: stair(neg, False))]  # second phase built on demand
    return _run(phases, index, _limit(index, T), stop)


def _early_stop(index: MultiIndex, q, k, X):
    C = np.asarray(index.second)
    if index.radius is None or index.l_max is None or np.any(np.abs(np.linalg.norm(C, axis=1) - 1.0) > _UNIT_TOL):
        raise DomainError("early termination requires unit-norm direction codewords and per-cluster norm bounds")
    g = _direction_bound(index, q)
    bound = np.where(g[None, :] >= 0, index.l_max[:, None] * g[None, :], index.l_min[:, None] * g[None, :])
    # arccos/cos round-trip costs a few ulps; widen so the bound stays an upper bound
    bound = bound + 1e-9 * np.abs(bound) + 1e-12
    bound[index.sizes() == 0] = -np.inf
    order = np.argsort(-bound, axis=None, kind="stable")
    flat = bound.ravel()
    seen = np.zeros(flat.size, dtype=bool)
    state = {"ptr": 0, "best": []}  # best: min-heap of the k largest exact inner products

    def stop(i, j, members):
        seen[i * index.K2 + j] = True
        best = state["best"]
        for v in (X[members] @ q).tolist():
            if len(best) < k:
                heapq.heappush(best, v)
            elif v > best[0]:
                heapq.heapreplace(best, v)
        ptr = state["ptr"]
        while ptr < order.size and seen[order[ptr]]:
            ptr += 1
        state["ptr"] = ptr
        if len(best) < k:
            return False
        remaining = flat[order[ptr]] if ptr < order.size else -np.inf
        # strict: an unseen item tying the k-th value could still displace it on id
        return best[0] > remaining

    return stop


def candidate_rerank(ids, q, data, k: int):
    """Exact top-``k`` among candidate ids: ``(ids, scores, short)``, ties to the lower id.

    ``short`` is True when fewer than ``k`` distinct candidates were given.
    """
    X = as_dataset(data)
    cand = np.unique(np.asarray(ids, dtype=np.int64))
    if cand.size and (cand[0] < 0 or cand[-1] >= X.shape[0]):
        raise DomainError("candidate id outside the dataset")
    q = np.asarray(q, dtype=np.float64).ravel()
    s = X[cand] @ q
    pick = top_ids(s[None, :], min(k, cand.size))[0] if cand.size else np.empty(0, dtype=np.int64)
    return cand[pick], s[pick], bool(cand.size < k)


def frontier_limit(t: int) -> float:
    """Queue size allowed after ``t`` emissions."""
    return 2.0 * math.sqrt(t) + 2.0
