"""Baseline vector quantizers for inner-product search: PQ, OPQ, RQ and AQ.

All four share :class:`QuantizerModel`. Codes are ``(n, M)`` integer arrays;
item ``x`` is approximated by the sum of its ``M`` codewords (concatenation
for PQ/OPQ, followed by the inverse rotation for OPQ).

Trained codebooks are rounded to float32 precision (and kept as float64
arrays) so that a model reloaded from an index file behaves bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import DEFAULT_MAX_ITERS, DEFAULT_TOL, lloyd_kmeans, nearest_centroid
from .data import as_dataset
from .errors import ConfigurationError, DomainError

__all__ = [
    "KINDS",
    "QuantizerModel",
    "train_pq",
    "train_opq",
    "train_rq",
    "train_aq",
    "train_quantizer",
    "aq_beam_encode",
    "encode",
    "reconstruct",
    "ip_table",
    "table_ip",
    "sub_seed",
    "to_f32",
]

KINDS = ("pq", "opq", "rq", "aq")

DEFAULT_K = 256
DEFAULT_BEAM = 32
DEFAULT_OPQ_ROUNDS = 10
DEFAULT_AQ_ROUNDS = 3
# Lloyd steps per OPQ round after the first (warm-started from the previous codebooks)
OPQ_INNER_ITERS = 5

_BLOCK = 1 << 22


def to_f32(a: np.ndarray) -> np.ndarray:
    """Round to float32 precision, keep float64 storage."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def sub_seed(seed: int, *keys) -> int:
    """Derive a stable child seed from ``seed`` and a path of integer/str keys."""
    ints = [int(seed)]
    for k in keys:
        if isinstance(k, str):
            ints.extend(k.encode())
        else:
            ints.append(int(k))
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


@dataclass(eq=False)
class QuantizerModel:
    kind: str
    M: int
    K: int
    d: int
    codebooks: np.ndarray  # (M, K, d/M) for pq/opq, (M, K, d) for rq/aq
    rotation: np.ndarray | None = None  # opq only, maps x -> R @ x
    beam_width: int = DEFAULT_BEAM
    metadata: dict = field(default_factory=dict)

    @property
    def sub_dim(self) -> int:
        return self.codebooks.shape[2]

    @property
    def is_product(self) -> bool:
        return self.kind in ("pq", "opq")

    def _check(self, x) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        return as_dataset(arr, self.d), single

    def _rotate(self, x: np.ndarray) -> np.ndarray:
        return x @ self.rotation.T if self.rotation is not None else x

    def encode(self, x) -> np.ndarray:
        """Code of one vector ``(M,)`` or of a batch ``(n, M)``."""
        X, single = self._check(x)
        if self.is_product:
            X = self._rotate(X)
            codes = np.empty((X.shape[0], self.M), dtype=np.int64)
            s = self.sub_dim
            for m in range(self.M):
                codes[:, m], _ = nearest_centroid(np.ascontiguousarray(X[:, m * s : (m + 1) * s]), self.codebooks[m])
        elif self.kind == "rq":
            codes = _greedy_encode(X, self.codebooks)
        else:
            codes = _beam_encode(X, self.codebooks, self.beam_width)
        return codes[0] if single else codes

    def reconstruct(self, codes) -> np.ndarray:
        c = np.asarray(codes)
        single = c.ndim == 1
        c = np.atleast_2d(c)
        if c.shape[1] != self.M:
            raise DomainError(f"code length {c.shape[1]} != M={self.M}")
        if c.size and (c.min() < 0 or c.max() >= self.K):
            raise DomainError(f"code index out of range [0, {self.K})")
        c = c.astype(np.int64)
        if self.is_product:
            out = np.concatenate([self.codebooks[m][c[:, m]] for m in range(self.M)], axis=1)
            if self.rotation is not None:
                out = out @ self.rotation
        else:
            out = np.zeros((c.shape[0], self.d))
            for m in range(self.M):
                out += self.codebooks[m][c[:, m]]
        return out[0] if single else out

    def ip_table(self, q) -> np.ndarray:
        """``(M, K)`` table of query-codeword inner products (``(nq, M, K)`` for a batch)."""
        Q, single = self._check(q)
        if self.is_product:
            Q = self._rotate(Q)
            s = self.sub_dim
            tab = np.stack([Q[:, m * s : (m + 1) * s] @ self.codebooks[m].T for m in range(self.M)], axis=1)
        else:
            tab = np.einsum("qd,mkd->qmk", Q, self.codebooks)
        return tab[0] if single else tab

    def score(self, queries, codes) -> np.ndarray:
        """Approximate inner products ``(nq, n)`` of queries against coded items."""
        return table_ip(self.ip_table(np.atleast_2d(queries)), codes)


def table_ip(table, code) -> np.ndarray | float:
    """Sum of table lookups along the code.

    ``table`` is ``(M, K)`` or ``(nq, M, K)``; ``code`` is ``(M,)`` or ``(n, M)``.
    Returns a float, an ``(n,)``/``(nq,)`` vector, or an ``(nq, n)`` matrix.
    """
    t = np.asarray(table, dtype=np.float64)
    c = np.asarray(code, dtype=np.int64)
    M = t.shape[-2]
    if c.shape[-1] != M:
        raise DomainError(f"code length {c.shape[-1]} != table rows {M}")
    if t.ndim == 2 and c.ndim == 1:
        acc = t[0, c[0]]
        for m in range(1, M):
            acc = acc + t[m, c[m]]
        return float(acc)
    if t.ndim == 2:
        t = t[None]
        squeeze_q = True
    else:
        squeeze_q = False
    c2 = np.atleast_2d(c)
    out = t[:, 0, c2[:, 0]].copy()
    for m in range(1, M):
        out += t[:, m, c2[:, m]]
    if c.ndim == 1:
        out = out[:, 0]
    return out[0] if squeeze_q else out


def encode(model, x):
    return model.encode(x)


def reconstruct(model, code):
    return model.reconstruct(code)


def ip_table(model, q):
    return model.ip_table(q)


def _sq_err(X: np.ndarray, recon: np.ndarray) -> np.ndarray:
    diff = X - recon
    return np.einsum("ij,ij->i", diff, diff)


def _check_pq(d: int, M: int, K: int) -> None:
    if M < 1 or K < 1:
        raise ConfigurationError("M and K must be positive")
    if d % M:
        raise ConfigurationError(f"dimension d={d} is not divisible by M={M}")


def _train_subspaces(X, M, K, max_iters, tol, seed, init=None):
    s = X.shape[1] // M
    books = np.empty((M, K, s))
    codes = np.empty((X.shape[0], M), dtype=np.int64)
    err = 0.0
    for m in range(M):
        sub = np.ascontiguousarray(X[:, m * s : (m + 1) * s])
        res = lloyd_kmeans(
            sub, K, max_iters=max_iters, seed=sub_seed(seed, m), tol=tol,
            init=None if init is None else init[m],
        )
        books[m] = res.centroids
        codes[:, m] = res.assignments
        err += res.objective
    return books, codes, err


def train_pq(data, M: int, K: int = DEFAULT_K, *, max_iters: int = DEFAULT_MAX_ITERS,
             tol: float = DEFAULT_TOL, seed: int = 0) -> QuantizerModel:
    """Independent k-means codebooks on ``M`` contiguous feature blocks."""
    X = as_dataset(data)
    n, d = X.shape
    _check_pq(d, M, K)
    books, codes, err = _train_subspaces(X, M, K, max_iters, tol, seed)
    model = QuantizerModel("pq", M, K, d, to_f32(books))
    model.metadata.update(train_error=err / n, seed=seed, max_iters=max_iters, tol=tol)
    return model


def train_opq(data, M: int, K: int = DEFAULT_K, rounds: int = DEFAULT_OPQ_ROUNDS, *,
              max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL, seed: int = 0,
              inner_iters: int = OPQ_INNER_ITERS) -> QuantizerModel:
    """Non-parametric OPQ: alternate PQ codebooks and an orthogonal Procrustes rotation.

    The first round is plain PQ with ``R = I``. Every later round first refits
    ``R`` to the current codes, then warm-starts the subspace k-means from the
    previous codebooks, so the recorded error never increases.
    """
    X = as_dataset(data)
    n, d = X.shape
    _check_pq(d, M, K)
    if rounds < 1:
        raise ConfigurationError("rounds must be >= 1")
    R = np.eye(d)
    books, codes, err = _train_subspaces(X, M, K, max_iters, tol, seed)
    history = [err / n]
    ortho = [0.0]
    for r in range(1, rounds):
        Y = np.concatenate([books[m][codes[:, m]] for m in range(M)], axis=1)
        U, _, Vt = np.linalg.svd(Y.T @ X)
        R = U @ Vt
        books, codes, err = _train_subspaces(X @ R.T, M, K, inner_iters, tol, sub_seed(seed, "round", r), init=books)
        history.append(err / n)
        ortho.append(float(np.abs(R.T @ R - np.eye(d)).max()))
    model = QuantizerModel("opq", M, K, d, to_f32(books), rotation=to_f32(R))
    model.metadata.update(history=history, orthonormality=ortho, train_error=history[-1],
                          rounds=rounds, seed=seed)
    return model


def _greedy_encode(X: np.ndarray, books: np.ndarray) -> np.ndarray:
    res = X.copy()
    codes = np.empty((X.shape[0], books.shape[0]), dtype=np.int64)
    for m in range(books.shape[0]):
        codes[:, m], _ = nearest_centroid(res, books[m])
        res -= books[m][codes[:, m]]
    return codes


def train_rq(data, M: int, K: int = DEFAULT_K, *, max_iters: int = DEFAULT_MAX_ITERS,
             tol: float = DEFAULT_TOL, seed: int = 0) -> QuantizerModel:
    """Residual quantization: codebook ``m`` is k-means over the residuals of codebooks ``< m``."""
    X = as_dataset(data)
    n, d = X.shape
    if M < 1 or K < 1:
        raise ConfigurationError("M and K must be positive")
    res = X.copy()
    books = np.empty((M, K, d))
    history = []
    for m in range(M):
        km = lloyd_kmeans(res, K, max_iters=max_iters, seed=sub_seed(seed, m), tol=tol)
        books[m] = km.centroids
        res -= km.centroids[km.assignments]
        history.append(float(np.einsum("ij,ij->", res, res)) / n)
    model = QuantizerModel("rq", M, K, d, to_f32(books))
    model.metadata.update(history=history, train_error=history[-1], seed=seed)
    return model


def _beam_encode(X: np.ndarray, books: np.ndarray, beam_width: int) -> np.ndarray:
    """Ordered beam search over the codebooks, never worse than greedy encoding."""
    M, K, d = books.shape
    n = X.shape[0]
    c_sq = np.einsum("mkd,mkd->mk", books, books)
    codes = np.empty((n, M), dtype=np.int64)
    step = max(1, _BLOCK // max(1, beam_width * K))
    for s in range(0, n, step):
        blk = X[s : s + step]
        b = blk.shape[0]
        res = blk[:, None, :].copy()  # (b, width, d)
        err = np.einsum("bwd,bwd->bw", res, res)
        part = np.zeros((b, 1, 0), dtype=np.int64)
        for m in range(M):
            width = res.shape[1]
            cand = err[:, :, None] - 2.0 * (res @ books[m].T) + c_sq[m][None, None, :]
            flat = cand.reshape(b, width * K)
            keep = min(beam_width, width * K)
            sel = np.argsort(flat, axis=1, kind="stable")[:, :keep]
            parent, word = np.divmod(sel, K)
            rows = np.arange(b)[:, None]
            res = res[rows, parent] - books[m][word]
            err = np.einsum("bwd,bwd->bw", res, res)
            part = np.concatenate([part[rows, parent], word[:, :, None]], axis=2)
        best = np.argmin(err, axis=1)
        beam_codes = part[np.arange(b), best]
        beam_err = err[np.arange(b), best]
        greedy = _greedy_encode(blk, books)
        g_rec = np.zeros_like(blk)
        for m in range(M):
            g_rec += books[m][greedy[:, m]]
        g_err = _sq_err(blk, g_rec)
        codes[s : s + b] = np.where((g_err < beam_err)[:, None], greedy, beam_codes)
    return codes


def aq_beam_encode(model: QuantizerModel, x, beam_width: int | None = None) -> np.ndarray:
    """Beam-search code for ``x`` under the model's additive codebooks."""
    X, single = model._check(x)
    codes = _beam_encode(X, model.codebooks, beam_width or model.beam_width)
    return codes[0] if single else codes


def _recon_additive(books: np.ndarray, codes: np.ndarray) -> np.ndarray:
    out = np.zeros((codes.shape[0], books.shape[2]))
    for m in range(books.shape[0]):
        out += books[m][codes[:, m]]
    return out


def least_squares_codebooks(X: np.ndarray, codes: np.ndarray, K: int, old: np.ndarray | None = None):
    """Codebooks minimizing sum ||x - sum_m C_m[code_m]||^2 for fixed codes.

    Solves the normal equations ``G C = B^T X`` with the indicator design
    matrix ``B``. ``G`` is singular whenever ``M >= 2`` (a constant can move
    between codebooks), so the minimum-norm solution is taken. Codewords no
    item uses keep their ``old`` value. Returns ``(codebooks, singular)``.
    """
    n, d = X.shape
    M = codes.shape[1]
    flat = codes + np.arange(M)[None, :] * K  # (n, M) column ids in [0, MK)
    MK = M * K
    pair = (flat[:, :, None] * MK + flat[:, None, :]).ravel()
    G = np.bincount(pair, minlength=MK * MK).reshape(MK, MK).astype(np.float64)
    BtX = np.zeros((MK, d))
    for j in range(d):
        BtX[:, j] = np.bincount(flat.ravel(), weights=np.repeat(X[:, j], M), minlength=MK)
    sol, _, rank, _ = np.linalg.lstsq(G, BtX, rcond=None)
    books = sol.reshape(M, K, d)
    unused = np.diag(G).reshape(M, K) == 0
    if old is not None and unused.any():
        books[unused] = old[unused]
    return books, bool(rank < MK)


def train_aq(data, M: int, K: int = DEFAULT_K, rounds: int = DEFAULT_AQ_ROUNDS,
             beam_width: int = DEFAULT_BEAM, *, max_iters: int = DEFAULT_MAX_ITERS,
             tol: float = DEFAULT_TOL, seed: int = 0) -> QuantizerModel:
    """Additive quantization initialized from RQ.

    Each round re-encodes with beam search (keeping an item's previous code
    when it is better) and then refits all codebooks jointly by least squares
    (kept only when it does not increase the error).
    """
    X = as_dataset(data)
    n, d = X.shape
    if rounds < 1:
        raise ConfigurationError("rounds must be >= 1")
    rq = train_rq(X, M, K, max_iters=max_iters, tol=tol, seed=seed)
    books = rq.codebooks.copy()
    codes = _greedy_encode(X, books)
    err = _sq_err(X, _recon_additive(books, codes))
    history = [float(err.sum()) / n]
    singular = False
    for _ in range(rounds):
        new_codes = _beam_encode(X, books, beam_width)
        new_err = _sq_err(X, _recon_additive(books, new_codes))
        better = new_err < err
        codes = np.where(better[:, None], new_codes, codes)
        err = np.where(better, new_err, err)
        cand, sing = least_squares_codebooks(X, codes, K, old=books)
        singular |= sing
        cand_err = _sq_err(X, _recon_additive(cand, codes))
        if cand_err.sum() <= err.sum():
            books, err = cand, cand_err
        history.append(float(err.sum()) / n)
    # rounding to float32 can move the error by ~1e-7 relative; the model uses the rounded books
    model = QuantizerModel("aq", M, K, d, to_f32(books), beam_width=beam_width)
    model.metadata.update(history=history, train_error=history[-1], singular_normal_equations=singular,
                          init="rq", rounds=rounds, seed=seed)
    return model


def train_quantizer(kind: str, data, M: int, K: int = DEFAULT_K, *, seed: int = 0,
                    max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
                    opq_rounds: int = DEFAULT_OPQ_ROUNDS, aq_rounds: int = DEFAULT_AQ_ROUNDS,
                    beam_width: int = DEFAULT_BEAM) -> QuantizerModel:
    kind = kind.lower()
    common = dict(max_iters=max_iters, tol=tol, seed=seed)
    if kind == "pq":
        return train_pq(data, M, K, **common)
    if kind == "opq":
        return train_opq(data, M, K, opq_rounds, **common)
    if kind == "rq":
        return train_rq(data, M, K, **common)
    if kind == "aq":
        return train_aq(data, M, K, aq_rounds, beam_width, **common)
    raise ConfigurationError(f"unknown quantizer kind {kind!r}; expected one of {KINDS}")
