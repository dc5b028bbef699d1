"""Norm-explicit quantization (NEQ).

The first ``M'`` of the ``M`` codebooks quantize the *relative norm*
``l_x = ||x|| / ||xbar||``, where ``xbar`` is the reconstruction of the unit
direction ``x / ||x||`` by an unmodified base quantizer that owns the other
``M - M'`` codebooks. An item is approximated as
``(sum of its norm codewords) * (sum of its direction codewords)``.

PQ and OPQ need the dimension to be a multiple of their codebook count, so
for those bases the directions are zero-padded up to the next multiple of
``M - M'``, spreading the zero columns so every subspace keeps ``floor`` or
``ceil`` of ``d / (M - M')`` real features. Padding changes neither norms nor
inner products.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .clustering import DEFAULT_MAX_ITERS, DEFAULT_TOL, scalar_kmeans
from .data import as_dataset, decompose
from .errors import ConfigurationError, DomainError
from .vq import (
    DEFAULT_AQ_ROUNDS,
    DEFAULT_BEAM,
    DEFAULT_K,
    DEFAULT_OPQ_ROUNDS,
    QuantizerModel,
    sub_seed,
    table_ip,
    to_f32,
    train_quantizer,
)

__all__ = [
    "NeqModel",
    "OpCounter",
    "neq_train",
    "neq_encode",
    "neq_ip",
    "vq_ip",
    "norm_error_report",
    "evaluate_m_prime",
    "select_m_prime",
    "EXACT_NORM_SLOTS",
]

# index slots charged for storing the relative norm as a raw float32
EXACT_NORM_SLOTS = 4


@dataclass
class OpCounter:
    """Tally of the scalar operations of one approximate inner product."""

    lookups: int = 0
    additions: int = 0
    multiplications: int = 0


@dataclass(eq=False)
class NeqModel:
    base: QuantizerModel  # direction quantizer with M - mprime codebooks over dimension `padded_d`
    norm_codebooks: np.ndarray  # (mprime, K); empty when exact_norm
    M: int
    mprime: int
    K: int
    d: int
    exact_norm: bool = False
    normalized: bool = True
    metadata: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return "ne-" + self.base.kind

    @property
    def padded_d(self) -> int:
        return self.base.d

    @property
    def _columns(self) -> np.ndarray:
        return pad_positions(self.d, self.padded_d, self.M - self.mprime)

    def _pad(self, x: np.ndarray) -> np.ndarray:
        if self.padded_d == self.d:
            return x
        out = np.zeros((x.shape[0], self.padded_d))
        out[:, self._columns] = x
        return out

    def _unpad(self, x: np.ndarray) -> np.ndarray:
        return x if self.padded_d == self.d else x[:, self._columns]

    def split(self, codes) -> tuple[np.ndarray, np.ndarray]:
        """``(norm_indexes, direction_indexes)`` of a code or a batch of codes."""
        c = np.asarray(codes)
        return c[..., : self.mprime], c[..., self.mprime :]

    # relative norm <-> norm indexes

    def _quantize_norms(self, l: np.ndarray) -> np.ndarray:
        if self.exact_norm:
            return np.frombuffer(l.astype("<f4").tobytes(), dtype=np.uint8).reshape(-1, EXACT_NORM_SLOTS).astype(np.int64)
        res = l.astype(np.float64).copy()
        codes = np.empty((l.shape[0], self.mprime), dtype=np.int64)
        for m in range(self.mprime):
            book = self.norm_codebooks[m]
            # ties to the lowest index; values outside the range clamp to the end codewords
            codes[:, m] = np.argmin(np.abs(res[:, None] - book[None, :]), axis=1)
            res -= book[codes[:, m]]
        return codes

    def quantized_norms(self, codes) -> np.ndarray:
        c = np.atleast_2d(np.asarray(codes, dtype=np.int64))
        nc = c[:, : self.mprime]
        if nc.size and (nc.min() < 0 or nc.max() >= self.K):
            raise DomainError(f"norm index out of range [0, {self.K})")
        if self.exact_norm:
            return np.frombuffer(nc.astype(np.uint8).tobytes(), dtype="<f4").astype(np.float64)
        lq = self.norm_codebooks[0][nc[:, 0]].copy()
        for m in range(1, self.mprime):
            lq = lq + self.norm_codebooks[m][nc[:, m]]
        return lq

    def relative_norms(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Direction codes and relative norms ``l_x`` of a batch (0 for zero items)."""
        X = as_dataset(x, self.d)
        norms = np.linalg.norm(X, axis=1)
        ok = norms > 0
        src = np.zeros_like(X)
        if self.normalized:
            src[ok] = X[ok] / norms[ok, None]
        else:
            src[ok] = X[ok]
        dcodes = self.base.encode(self._pad(src))
        xbar = self._unpad(self.base.reconstruct(dcodes))
        bar_norm = np.linalg.norm(xbar, axis=1)
        l = np.zeros(X.shape[0])
        good = ok & (bar_norm > 0)
        l[good] = norms[good] / bar_norm[good]
        return dcodes, l

    def encode(self, x) -> np.ndarray:
        """Codes ``(n, M)``: norm indexes first, then direction indexes."""
        single = np.asarray(x).ndim == 1
        dcodes, l = self.relative_norms(x)
        codes = np.concatenate([self._quantize_norms(l), dcodes], axis=1)
        return codes[0] if single else codes

    def reconstruct(self, codes) -> np.ndarray:
        c = np.asarray(codes, dtype=np.int64)
        single = c.ndim == 1
        c = np.atleast_2d(c)
        if c.shape[1] != self.M:
            raise DomainError(f"code length {c.shape[1]} != M={self.M}")
        xbar = self._unpad(self.base.reconstruct(c[:, self.mprime :]))
        out = self.quantized_norms(c)[:, None] * xbar
        return out[0] if single else out

    def ip_table(self, q) -> np.ndarray:
        """Inner products of the query with the direction codewords, ``(M - M', K)``."""
        Q = np.asarray(q, dtype=np.float64)
        single = Q.ndim == 1
        Q = as_dataset(Q, self.d)
        tab = self.base.ip_table(self._pad(Q))
        return tab[0] if single else tab

    def score(self, queries, codes) -> np.ndarray:
        codes = np.atleast_2d(codes)
        lq = self.quantized_norms(codes)
        return table_ip(self.ip_table(np.atleast_2d(queries)), codes[:, self.mprime :]) * lq[None, :]


def _resolve_padding(kind: str, d: int, m_dir: int) -> int:
    if kind in ("pq", "opq"):
        return int(math.ceil(d / m_dir) * m_dir)
    return d


def pad_positions(d: int, padded_d: int, m_dir: int) -> np.ndarray:
    """Columns of the padded space holding the ``d`` real features."""
    if padded_d == d:
        return np.arange(d)
    width = padded_d // m_dir
    base, extra = divmod(d, m_dir)
    cols = [m * width + i for m in range(m_dir) for i in range(base + (m < extra))]
    return np.asarray(cols)


def neq_train(data, base_kind: str, M: int, mprime: int = 1, K: int = DEFAULT_K, *,
              seed: int = 0, max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
              opq_rounds: int = DEFAULT_OPQ_ROUNDS, aq_rounds: int = DEFAULT_AQ_ROUNDS,
              beam_width: int = DEFAULT_BEAM, exact_norm: bool = False,
              normalize: bool = True) -> NeqModel:
    """Train an NEQ model on top of ``base_kind`` (pq, opq, rq or aq).

    ``exact_norm`` stores the float32 relative norm in ``4`` index slots
    instead of learning norm codebooks (requires ``K >= 256``, ``M >= 5``).
    ``normalize=False`` fits the base quantizer to the raw items and uses
    ``||x|| / ||x_tilde||`` as the relative norm.
    """
    X = as_dataset(data)
    n, d = X.shape
    if exact_norm:
        if K < 256 or M <= EXACT_NORM_SLOTS:
            raise ConfigurationError("exact-norm storage needs K >= 256 and M >= 5")
        mprime = EXACT_NORM_SLOTS
    elif not 1 <= mprime <= M - 1:
        raise ConfigurationError(f"M' must lie in [1, M-1] = [1, {M - 1}], got {mprime}")
    m_dir = M - mprime
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        norms, dirs, zero_rows = decompose(X)
    src = dirs if normalize else X
    pd = _resolve_padding(base_kind.lower(), d, m_dir)
    padded = np.zeros((n, pd))
    padded[:, pad_positions(d, pd, m_dir)] = src
    nonzero = norms > 0
    if not nonzero.any():
        raise DomainError("all items have zero norm")
    base = train_quantizer(
        base_kind, padded[nonzero], m_dir, K, seed=sub_seed(seed, "direction"),
        max_iters=max_iters, tol=tol, opq_rounds=opq_rounds, aq_rounds=aq_rounds,
        beam_width=beam_width,
    )
    model = NeqModel(base, np.zeros((0 if exact_norm else mprime, K)), M, mprime, K, d,
                     exact_norm=exact_norm, normalized=normalize)
    dcodes, l = model.relative_norms(X)
    valid = l > 0
    if not exact_norm:
        res = l[valid].copy()
        books = np.empty((mprime, K))
        for m in range(mprime):
            km = scalar_kmeans(res, K, max_iters=max_iters, seed=sub_seed(seed, "norm", m), tol=tol)
            books[m] = to_f32(km.centroids[:, 0])
            idx = np.argmin(np.abs(res[:, None] - books[m][None, :]), axis=1)
            res -= books[m][idx]
        model.norm_codebooks = books
    lq = model.quantized_norms(model._quantize_norms(l))
    resid = np.abs(l[valid] - lq[valid])
    model.metadata.update(
        seed=seed,
        zero_rows=zero_rows,
        padded_d=pd,
        train_norm_residual_max=float(resid.max()) if resid.size else 0.0,
        train_norm_residual_mean=float(resid.mean()) if resid.size else 0.0,
    )
    return model


def neq_encode(model: NeqModel, x) -> np.ndarray:
    return model.encode(x)


def vq_ip(table, code, counter: OpCounter | None = None) -> float:
    """Baseline approximate inner product: ``M`` lookups and ``M - 1`` additions."""
    acc = table[0][code[0]]
    if counter:
        counter.lookups += 1
    for m in range(1, len(code)):
        acc = acc + table[m][code[m]]
        if counter:
            counter.lookups += 1
            counter.additions += 1
    return float(acc)


def neq_ip(table, code, model: NeqModel, counter: OpCounter | None = None) -> float:
    """Approximate ``q^T x`` from the direction table and an item's NEQ code.

    Sums the norm codewords into ``l``, sums the direction lookups into
    ``p`` and returns ``l * p``. Each sum starts from its first term.
    """
    code = np.asarray(code)
    mp = model.mprime
    if model.exact_norm:
        l = float(model.quantized_norms(code[None, :])[0])
        if counter:
            counter.lookups += mp
    else:
        books = model.norm_codebooks
        l = books[0][code[0]]
        if counter:
            counter.lookups += 1
        for m in range(1, mp):
            l = l + books[m][code[m]]
            if counter:
                counter.lookups += 1
                counter.additions += 1
    p = table[0][code[mp]]
    if counter:
        counter.lookups += 1
    for m in range(mp + 1, model.M):
        p = p + table[m - mp][code[m]]
        if counter:
            counter.lookups += 1
            counter.additions += 1
    if counter:
        counter.multiplications += 1
    return float(l * p)


def norm_error_report(model, data, codes=None) -> float:
    """Mean of ``| ||x|| - ||x_tilde|| | / ||x||`` over non-zero items."""
    X = as_dataset(data)
    if codes is None:
        codes = model.encode(X)
    recon = model.reconstruct(codes)
    norms = np.linalg.norm(X, axis=1)
    ok = norms > 0
    return float(np.mean(np.abs(norms[ok] - np.linalg.norm(recon[ok], axis=1)) / norms[ok]))


def evaluate_m_prime(data, base_kind: str, M: int, K: int, sample_queries, k: int = 20,
                     budget: int = 100, *, seed: int = 0, **train_kw) -> dict[int, float]:
    """Mean recall@``budget`` on the sample queries for every legal ``M'``."""
    from .evaluation import brute_force_topk, recall_curve

    X = as_dataset(data)
    Q = as_dataset(sample_queries, X.shape[1])
    if Q.shape[0] == 0:
        raise DomainError("sample queries must be non-empty")
    truth = brute_force_topk(X, Q, k)
    out = {}
    for mp in range(1, M):
        model = neq_train(X, base_kind, M, mp, K, seed=seed, **train_kw)
        curve = recall_curve(model, X, Q, truth, [budget])
        out[mp] = float(curve.mean_recall[0])
    return out


def select_m_prime(data, base_kind: str, M: int, K: int, sample_queries, k: int = 20,
                   budget: int = 100, *, seed: int = 0, **train_kw) -> int:
    """``M'`` with the best sample recall; ties go to the smaller ``M'``.

    The sample queries are used as given; passing queries drawn from the
    evaluation set leaks into any later measurement.
    """
    if M < 2:
        raise ConfigurationError("NEQ needs M >= 2")
    if M == 2:
        return 1
    table = evaluate_m_prime(data, base_kind, M, K, sample_queries, k, budget, seed=seed, **train_kw)
    best = max(table.values())
    return min(mp for mp, r in table.items() if r == best)
