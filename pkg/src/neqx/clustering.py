"""Lloyd k-means with k-means++ seeding, its scalar specialization, and spherical k-means."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import as_dataset
from .errors import DomainError

__all__ = [
    "KMeansResult",
    "lloyd_kmeans",
    "scalar_kmeans",
    "spherical_kmeans",
    "nearest_centroid",
    "DEFAULT_MAX_ITERS",
    "DEFAULT_TOL",
]

DEFAULT_MAX_ITERS = 25
DEFAULT_TOL = 1e-4

# upper bound on the number of entries of one distance block
_BLOCK = 1 << 22


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (K, d')
    assignments: np.ndarray  # (n,) int64
    objective: float
    iterations_run: int
    history: list[float] = field(default_factory=list)
    # indexes of centroids that were duplicated from random points because K > n
    surplus: list[int] = field(default_factory=list)


def _chunk_rows(n_cols: int) -> int:
    return max(1, _BLOCK // max(1, n_cols))


def nearest_centroid(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest centroid for every row and the exact squared distance.

    Ties break to the lowest centroid index.
    """
    n = x.shape[0]
    K = centroids.shape[0]
    assign = np.empty(n, dtype=np.int64)
    c_sq = np.einsum("ij,ij->i", centroids, centroids)
    step = _chunk_rows(K)
    for s in range(0, n, step):
        blk = x[s : s + step]
        # ||x||^2 is constant per row and does not change the argmin
        d2 = c_sq[None, :] - 2.0 * (blk @ centroids.T)
        assign[s : s + step] = np.argmin(d2, axis=1)
    diff = x - centroids[assign]
    return assign, np.einsum("ij,ij->i", diff, diff)


def _kmeanspp(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    diff = x - x[chosen[0]]
    mind = np.einsum("ij,ij->i", diff, diff)
    for _ in range(1, K):
        total = mind.sum()
        if total > 0:
            idx = int(rng.choice(n, p=mind / total))
        else:
            # every point coincides with a chosen centroid
            idx = int(rng.integers(n))
        chosen.append(idx)
        diff = x - x[idx]
        np.minimum(mind, np.einsum("ij,ij->i", diff, diff), out=mind)
    return x[chosen].copy()


def _update_means(x, assign, dist, K, old):
    d = x.shape[1]
    counts = np.bincount(assign, minlength=K)
    sums = np.zeros((K, d))
    _scatter_add(sums, assign, x)
    cent = old.copy()
    filled = counts > 0
    cent[filled] = sums[filled] / counts[filled, None]
    empty = np.flatnonzero(~filled)
    if empty.size:
        # re-seed empty clusters from the points worst served by their centroid
        order = np.argsort(-dist, kind="stable")
        cent[empty] = x[order[: empty.size]]
    return cent


def _scatter_add(out, idx, x):
    # sum rows per cluster; one matmul with a sparse indicator is slower at these sizes
    for j in range(x.shape[1]):
        out[:, j] = np.bincount(idx, weights=x[:, j], minlength=out.shape[0])


def lloyd_kmeans(
    points,
    K: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    init: np.ndarray | None = None,
) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding (or from ``init`` when given).

    Stops after ``max_iters`` update steps or when the relative objective
    improvement of a step falls below ``tol``. The returned assignments are
    nearest-centroid with respect to the returned centroids. ``history`` holds
    the objective after the initial assignment and after every step.
    """
    x = as_dataset(points)
    n = x.shape[0]
    if n < 1:
        raise DomainError("k-means needs at least one point")
    if K < 1:
        raise DomainError("K must be positive")
    if max_iters < 1:
        raise DomainError("max_iters must be positive")
    rng = np.random.default_rng(seed)

    if init is not None:
        cent = np.array(init, dtype=np.float64)
        if cent.shape != (K, x.shape[1]):
            raise DomainError(f"init must have shape {(K, x.shape[1])}, got {cent.shape}")
    elif K >= n:
        extra = rng.integers(n, size=K - n)
        cent = np.concatenate([x, x[extra]])
        assign, dist = nearest_centroid(x, cent)
        obj = float(dist.sum())
        return KMeansResult(cent, assign, obj, 0, [obj], list(range(n, K)))
    else:
        cent = _kmeanspp(x, K, rng)

    assign, dist = nearest_centroid(x, cent)
    obj = float(dist.sum())
    history = [obj]
    it = 0
    while it < max_iters and obj > 0:
        new_cent = _update_means(x, assign, dist, K, cent)
        new_assign, new_dist = nearest_centroid(x, new_cent)
        new_obj = float(new_dist.sum())
        it += 1
        history.append(new_obj)
        improvement = (obj - new_obj) / obj
        cent, assign, dist, obj = new_cent, new_assign, new_dist, new_obj
        if improvement < tol:
            break
    return KMeansResult(cent, assign, obj, it, history)


def scalar_kmeans(
    values,
    K: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    bins: int = 1024,
) -> KMeansResult:
    """k-means over reals; centroids come back with shape ``(K, 1)``.

    Lloyd's algorithm is seeded with the optimal partition of the sorted
    values, found by dynamic programming over at most ``bins`` weighted
    quantile groups. With ``n <= bins`` the seed is the exact optimum.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    n = v.shape[0]
    if n < 1 or K < 1:
        return lloyd_kmeans(v, K, max_iters=max_iters, seed=seed, tol=tol)
    init = _optimal_1d(v[:, 0], K, bins) if K < n else None
    if init is None:
        return lloyd_kmeans(v, K, max_iters=max_iters, seed=seed, tol=tol)
    return lloyd_kmeans(v, K, max_iters=max_iters, seed=seed, tol=tol, init=init[:, None])


def _optimal_1d(v: np.ndarray, K: int, bins: int) -> np.ndarray | None:
    """Centroids of the least-squares K-partition of weighted sorted groups (None if fewer groups than K)."""
    sv = np.sort(v)
    vals, counts = np.unique(sv, return_counts=True)
    if vals.size > bins:
        # half the group boundaries at equal counts, half at equal widths so sparse tails stay resolved
        by_count = np.linspace(0, sv.size, bins // 2 + 1).round().astype(np.int64)
        by_width = np.searchsorted(sv, np.linspace(sv[0], sv[-1], bins // 2 + 1)[1:-1])
        cuts = np.unique(np.concatenate([by_count, by_width]))
        cs = np.concatenate([[0.0], np.cumsum(sv)])
        counts = np.diff(cuts).astype(np.float64)
        vals = (cs[cuts[1:]] - cs[cuts[:-1]]) / counts
    if vals.size < K:
        return None
    w = counts.astype(np.float64)
    x = vals - np.average(vals, weights=w)
    W = np.concatenate([[0.0], np.cumsum(w)])
    S1 = np.concatenate([[0.0], np.cumsum(w * x)])
    S2 = np.concatenate([[0.0], np.cumsum(w * x * x)])
    B = vals.size
    i = np.arange(B + 1)[:, None]
    j = np.arange(B + 1)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = S2[j] - S2[i] - (S1[j] - S1[i]) ** 2 / (W[j] - W[i])
    cost = np.where(i < j, np.maximum(cost, 0.0), np.inf)
    D = cost[0].copy()  # one cluster over groups [0, j)
    back = np.zeros((K, B + 1), dtype=np.int64)
    for k in range(1, K):
        tot = D[:, None] + cost
        back[k] = np.argmin(tot, axis=0)
        D = tot[back[k], np.arange(B + 1)]
    bounds = [B]
    for k in range(K - 1, 0, -1):
        bounds.append(int(back[k, bounds[-1]]))
    bounds.append(0)
    bounds = bounds[::-1]
    ws = W[bounds[1:]] - W[bounds[:-1]]
    return (S1[bounds[1:]] - S1[bounds[:-1]]) / ws + np.average(vals, weights=w)


def _normalize_rows(c: np.ndarray) -> np.ndarray:
    return c / np.linalg.norm(c, axis=1, keepdims=True)


def spherical_kmeans(
    points,
    K: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> KMeansResult:
    """k-means on the unit sphere with cosine similarity.

    Centroids are unit vectors. ``objective`` is the total cosine similarity
    of points to their centroids, so it is maximized and non-decreasing.
    """
    x = as_dataset(points)
    n = x.shape[0]
    if n < 1 or K < 1 or max_iters < 1:
        raise DomainError("spherical k-means needs n, K, max_iters >= 1")
    lens = np.linalg.norm(x, axis=1)
    if np.any(np.abs(lens - 1.0) > 1e-5):
        raise DomainError("spherical k-means requires unit-norm rows")
    rng = np.random.default_rng(seed)

    # k-means++ seeding on the cosine distance 1 - cos
    chosen = [int(rng.integers(n))]
    mind = np.maximum(1.0 - x @ x[chosen[0]], 0.0)
    for _ in range(1, K):
        total = mind.sum()
        idx = int(rng.choice(n, p=mind / total)) if total > 0 else int(rng.integers(n))
        chosen.append(idx)
        np.minimum(mind, np.maximum(1.0 - x @ x[idx], 0.0), out=mind)
    cent = _normalize_rows(x[chosen].copy())

    def assign_to(c):
        a = np.empty(n, dtype=np.int64)
        step = _chunk_rows(K)
        for s in range(0, n, step):
            a[s : s + step] = np.argmax(x[s : s + step] @ c.T, axis=1)
        sim = np.einsum("ij,ij->i", x, c[a])
        return a, sim

    assign, sim = assign_to(cent)
    obj = float(sim.sum())
    history = [obj]
    it = 0
    while it < max_iters:
        sums = np.zeros_like(cent)
        _scatter_add(sums, assign, x)
        lens = np.linalg.norm(sums, axis=1)
        new_cent = cent.copy()
        ok = lens > 1e-12
        new_cent[ok] = sums[ok] / lens[ok, None]
        dead = np.flatnonzero(~ok)
        if dead.size:
            order = np.argsort(sim, kind="stable")
            new_cent[dead] = x[order[: dead.size]]
        new_assign, new_sim = assign_to(new_cent)
        new_obj = float(new_sim.sum())
        it += 1
        history.append(new_obj)
        gain = (new_obj - obj) / max(abs(obj), 1e-300)
        cent, assign, sim, obj = new_cent, new_assign, new_sim, new_obj
        if gain < tol:
            break
    return KMeansResult(_normalize_rows(cent), assign, obj, it, history)
