"""Single-file index format holding a trained model together with its codes.

Layout, all integers little-endian::

    magic "NEQX" | u32 version | u8 kind | u8 M | u8 M' | u8 reserved
    | u32 K | u32 d | u64 n | u32 flags
    | norm codebooks (M' x K float32) | direction codebooks (float32)
    | rotation (D x D float32, when flagged) | codes (n x M, u8 if K <= 256 else u16)
    | u32 CRC32 of the payload (every byte after the header)

``kind`` is the base quantizer (0 pq, 1 opq, 2 rq, 3 aq). Flag bits: 0 rotation
present, 1 norm-explicit, 2 exact relative norm, 3 directions not normalized;
bits 16-31 carry the beam width. For NEQ models with a PQ/OPQ base ``D`` is the
zero-padded direction dimension, which follows from ``d`` and ``M - M'``.
"""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .errors import ConfigurationError, FormatError, IntegrityError, TruncatedFileError, VersionError
from .neq import NeqModel, _resolve_padding
from .vq import KINDS, QuantizerModel

__all__ = ["serialize_index", "deserialize_index", "append_codes", "FORMAT_VERSION", "SUPPORTED_VERSIONS"]

MAGIC = b"NEQX"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)
_HEADER = struct.Struct("<4sIBBBBIIQI")

F_ROTATION = 1 << 0
F_NORM_EXPLICIT = 1 << 1
F_EXACT_NORM = 1 << 2
F_UNNORMALIZED = 1 << 3
MAX_K = 1 << 16


def _code_dtype(K: int) -> np.dtype:
    return np.dtype("u1") if K <= 256 else np.dtype("<u2")


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _encode(model, codes) -> bytes:
    if isinstance(model, NeqModel):
        base, M, mprime = model.base, model.M, model.mprime
        norm_books = model.norm_codebooks
    elif isinstance(model, QuantizerModel):
        base, M, mprime = model, model.M, 0
        norm_books = np.zeros((0, model.K))
    else:
        raise ConfigurationError(f"cannot store a {type(model).__name__}")
    K, d = model.K, model.d
    if K > MAX_K:
        raise ConfigurationError(f"K={K} exceeds the largest storable codebook size {MAX_K}")
    if M > 255:
        raise ConfigurationError("at most 255 codebooks can be stored")
    if not 0 <= base.beam_width < (1 << 16):
        raise ConfigurationError("beam width must fit in 16 bits")
    c = np.asarray(codes, dtype=np.int64)
    if c.size == 0:
        c = c.reshape(0, M)
    if c.ndim != 2 or c.shape[1] != M:
        raise FormatError(f"codes must have shape (n, {M}), got {c.shape}")
    if c.size and (c.min() < 0 or c.max() >= K):
        raise FormatError(f"code index out of range [0, {K})")

    flags = base.beam_width << 16
    if base.rotation is not None:
        flags |= F_ROTATION
    if isinstance(model, NeqModel):
        flags |= F_NORM_EXPLICIT
        if model.exact_norm:
            flags |= F_EXACT_NORM
        if not model.normalized:
            flags |= F_UNNORMALIZED
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, KINDS.index(base.kind), M, mprime, 0, K, d, c.shape[0], flags)
    parts = [head, _f32(norm_books), _f32(base.codebooks)]
    if base.rotation is not None:
        parts.append(_f32(base.rotation))
    parts.append(c.astype(_code_dtype(K)).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body[_HEADER.size :]))


def serialize_index(model, codes, path) -> None:
    """Write ``model`` and its ``(n, M)`` codes to ``path``."""
    blob = _encode(model, codes)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, nbytes: int) -> bytes:
        if self.pos + nbytes > len(self.buf):
            raise TruncatedFileError(f"{self.path}: file ends at byte {len(self.buf)}, "
                                     f"needed {self.pos + nbytes}")
        out = self.buf[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64).reshape(shape)


def deserialize_index(path):
    """Inverse of :func:`serialize_index`: ``(model, codes)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    rd = _Reader(buf, path)
    magic, version, kind, M, mprime, _, K, d, n, flags = _HEADER.unpack(rd.take(_HEADER.size))
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version not in SUPPORTED_VERSIONS:
        raise VersionError(f"{path}: format version {version} is not supported "
                           f"(supported: {', '.join(map(str, SUPPORTED_VERSIONS))})")
    if kind >= len(KINDS):
        raise FormatError(f"{path}: unknown quantizer kind {kind}")
    if K < 1 or K > MAX_K or M < 1:
        raise FormatError(f"{path}: invalid header K={K} M={M}")
    base_kind = KINDS[kind]
    neq = bool(flags & F_NORM_EXPLICIT)
    exact = bool(flags & F_EXACT_NORM)
    beam = flags >> 16
    if not neq and mprime:
        raise FormatError(f"{path}: M'={mprime} without the norm-explicit flag")
    m_dir = M - mprime
    if m_dir < 1:
        raise FormatError(f"{path}: no direction codebooks (M={M}, M'={mprime})")
    D = _resolve_padding(base_kind, d, m_dir) if neq else d
    if base_kind in ("pq", "opq") and D % m_dir:
        raise FormatError(f"{path}: dimension {D} not divisible by {m_dir} codebooks")
    sub = D // m_dir if base_kind in ("pq", "opq") else D

    norm_books = rd.floats((0 if exact or not neq else mprime, K))
    books = rd.floats((m_dir, K, sub))
    rotation = rd.floats((D, D)) if flags & F_ROTATION else None
    cdt = _code_dtype(K)
    codes = np.frombuffer(rd.take(n * M * cdt.itemsize), dtype=cdt).astype(np.int64).reshape(n, M)
    end = rd.pos
    (crc,) = struct.unpack("<I", rd.take(4))
    if rd.pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - rd.pos} unexpected trailing bytes")
    if zlib.crc32(buf[_HEADER.size : end]) != crc:
        raise IntegrityError(f"{path}: checksum mismatch, the file is corrupted")
    if codes.size and codes.max() >= K:
        raise FormatError(f"{path}: code index out of range [0, {K})")

    base = QuantizerModel(base_kind, m_dir, K, D, books, rotation, beam_width=beam)
    if not neq:
        return base, codes
    model = NeqModel(base, norm_books, M, mprime, K, d, exact_norm=exact,
                     normalized=not flags & F_UNNORMALIZED)
    return model, codes


def append_codes(path, new_codes) -> int:
    """Append codes of further items to an index file; returns the new item count."""
    model, codes = deserialize_index(path)
    c = np.asarray(new_codes, dtype=np.int64).reshape(-1, codes.shape[1])
    merged = np.concatenate([codes, c])
    serialize_index(model, merged, path)
    return merged.shape[0]
