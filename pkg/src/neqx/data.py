"""Datasets, TEXMEX vector files, norm statistics and synthetic data.

A dataset is a row-major ``(n, d)`` float64 array with finite entries.
Functions accept anything array-like and validate through :func:`as_dataset`.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError, TruncatedFileError

__all__ = [
    "NormStats",
    "as_dataset",
    "read_vecs",
    "write_vecs",
    "read_ivecs",
    "norm_stats",
    "decompose",
    "synthesize",
    "NORM_PROFILES",
]

# per-format element dtype, little-endian
_FORMATS = {
    "fvecs": np.dtype("<f4"),
    "bvecs": np.dtype("u1"),
    "ivecs": np.dtype("<i4"),
}

NORM_PROFILES = ("constant", "gaussian", "longtail", "topheavy")

# Pareto shape for the longtail profile; a=2.5 puts max/median near 30 at n=10k.
_PARETO_SHAPE = 2.5


def as_dataset(x, d: int | None = None) -> np.ndarray:
    """Validate ``x`` as an ``(n, d)`` finite float64 matrix.

    A 1-D input is treated as a single row.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DomainError(f"expected a 2-D dataset, got shape {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise DomainError(f"dimension mismatch: expected d={d}, got d={arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("dataset contains NaN or Inf entries")
    return np.ascontiguousarray(arr)


def _fmt_dtype(fmt: str) -> np.dtype:
    try:
        return _FORMATS[fmt]
    except KeyError:
        raise DomainError(f"unknown vecs format {fmt!r}; expected one of {sorted(_FORMATS)}") from None


def _decode(raw: bytes, fmt: str, path) -> np.ndarray:
    item = _fmt_dtype(fmt)
    if len(raw) == 0:
        return np.zeros((0, 0), dtype=item)
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file shorter than one dimension header")
    d = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if d <= 0:
        raise FormatError(f"{path}: invalid dimension header {d}")
    rec = 4 + d * item.itemsize
    n_full = len(raw) // rec
    buf = np.frombuffer(raw, dtype=np.uint8, count=n_full * rec).reshape(n_full, rec)
    headers = buf[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(headers != d)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"{path}: record {i} declares d={int(headers[i])}, expected d={d}")
    if len(raw) != n_full * rec:
        raise TruncatedFileError(
            f"{path}: truncated record after {n_full} complete records "
            f"({len(raw) - n_full * rec} trailing bytes)"
        )
    return buf[:, 4:].copy().view(item).reshape(n_full, d)


def read_vecs(path: str | os.PathLike, fmt: str | None = None) -> np.ndarray:
    """Read an fvecs/bvecs/ivecs file into a float64 dataset.

    ``fmt`` defaults to the file extension. Entries of bvecs and ivecs files
    are widened to reals. An empty file yields an ``(0, 0)`` array.
    """
    fmt = fmt or os.path.splitext(os.fspath(path))[1].lstrip(".")
    _fmt_dtype(fmt)
    with open(path, "rb") as f:
        raw = f.read()
    return _decode(raw, fmt, path).astype(np.float64)


def read_ivecs(path: str | os.PathLike) -> np.ndarray:
    """Read an ivecs file keeping integer entries (ground-truth id lists)."""
    with open(path, "rb") as f:
        raw = f.read()
    return _decode(raw, "ivecs", path).astype(np.int64)


def write_vecs(ds, path: str | os.PathLike, fmt: str | None = None) -> None:
    """Write a dataset as fvecs/bvecs/ivecs.

    bvecs requires integral entries in [0, 255] and ivecs integral entries in
    the int32 range; anything else raises :class:`DomainError`.
    """
    fmt = fmt or os.path.splitext(os.fspath(path))[1].lstrip(".")
    item = _fmt_dtype(fmt)
    arr = np.asarray(ds)
    if arr.ndim != 2:
        raise DomainError(f"expected a 2-D dataset, got shape {arr.shape}")
    n, d = arr.shape
    if fmt == "bvecs":
        if arr.size and (arr.min() < 0 or arr.max() > 255 or np.any(arr != np.round(arr))):
            raise DomainError("bvecs entries must be integers in [0, 255]")
    elif fmt == "ivecs":
        info = np.iinfo(np.int32)
        if arr.size and (arr.min() < info.min or arr.max() > info.max or np.any(arr != np.round(arr))):
            raise DomainError("ivecs entries must be integers in the int32 range")
    body = arr.astype(item)
    rec = np.empty((n, 4 + d * item.itemsize), dtype=np.uint8)
    rec[:, :4] = np.full((n, 1), d, dtype="<i4").view(np.uint8)
    rec[:, 4:] = body.reshape(n, d).view(np.uint8).reshape(n, d * item.itemsize)
    with open(path, "wb") as f:
        f.write(rec.tobytes())


@dataclass(frozen=True)
class NormStats:
    min: float
    max: float
    mean: float
    stddev: float
    histogram: np.ndarray  # counts over `buckets` equal-width bins on [0, max]
    edges: np.ndarray


def norm_stats(ds, buckets: int = 50) -> NormStats:
    x = as_dataset(ds)
    if x.shape[0] == 0:
        raise DomainError("norm statistics of an empty dataset are undefined")
    if buckets < 1:
        raise DomainError("buckets must be positive")
    norms = np.linalg.norm(x, axis=1)
    top = float(norms.max())
    edges = np.linspace(0.0, top if top > 0 else 1.0, buckets + 1)
    # np.histogram includes the right edge in the last bin
    hist, _ = np.histogram(norms, bins=edges)
    return NormStats(
        min=float(norms.min()),
        max=top,
        mean=float(norms.mean()),
        stddev=float(norms.std()),
        histogram=hist,
        edges=edges,
    )


def decompose(ds) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Split rows into norms and unit direction vectors.

    Returns ``(norms, directions, zero_rows)``. Zero rows keep a zero
    direction and are listed in ``zero_rows``; a warning is emitted for them.
    """
    x = as_dataset(ds)
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0
    directions = np.zeros_like(x)
    np.divide(x, norms[:, None], out=directions, where=~zero[:, None])
    zero_rows = np.flatnonzero(zero).tolist()
    if zero_rows:
        warnings.warn(f"{len(zero_rows)} zero-norm rows have no direction", RuntimeWarning, stacklevel=2)
    return norms, directions, zero_rows


def _profile_norms(rng: np.random.Generator, n: int, profile: str) -> np.ndarray:
    if profile == "constant":
        return np.ones(n)
    if profile == "gaussian":
        return np.abs(rng.normal(1.0, 0.1, size=n))
    if profile == "longtail":
        return 1.0 + rng.pareto(_PARETO_SHAPE, size=n)
    if profile == "topheavy":
        return np.clip(1.0 - np.abs(rng.normal(0.0, 0.15, size=n)), 1e-6, 1.0)
    raise DomainError(f"unknown norm profile {profile!r}; expected one of {NORM_PROFILES}")


def synthesize(n: int, d: int, norm_profile: str = "constant", seed: int = 0) -> np.ndarray:
    """Random dataset with directions uniform on the sphere and a chosen norm profile.

    Profiles: ``constant`` (all 1), ``gaussian`` (|N(1, 0.1)|), ``longtail``
    (1 + Lomax(2.5), i.e. Pareto with scale 1) and ``topheavy``
    (1 - |N(0, 0.15)| clipped to (0, 1]).
    """
    if n < 1 or d < 1:
        raise DomainError("n and d must be positive")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, d))
    lens = np.linalg.norm(g, axis=1)
    # a zero Gaussian draw has probability zero; guard anyway
    lens[lens == 0] = 1.0
    directions = g / lens[:, None]
    return directions * _profile_norms(rng, n, norm_profile)[:, None]
