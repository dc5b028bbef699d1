"""Vector quantizers that encode item norms explicitly, for inner-product search.

Baseline quantizers (PQ, OPQ, RQ, AQ), their norm-explicit wrappers, the
error decomposition toolkit, an inverted multi-index, recall evaluation, and a
single-file index format.
"""

import os as _os

# NEQ_THREADS caps BLAS parallelism; it only takes effect when set before numpy loads
if _os.environ.get("NEQ_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["NEQ_THREADS"])

__version__ = "0.1.0"

from .clustering import KMeansResult, lloyd_kmeans, scalar_kmeans, spherical_kmeans  # noqa: E402
from .data import NormStats, decompose, norm_stats, read_ivecs, read_vecs, synthesize, write_vecs  # noqa: E402
from .errors import (  # noqa: E402
    ConfigurationError,
    DomainError,
    FormatError,
    IntegrityError,
    NeqxError,
    TruncatedFileError,
    VersionError,
)
from .evaluation import RecallCurve, brute_force_topk, recall_at, recall_curve  # noqa: E402
from .neq import NeqModel, neq_encode, neq_ip, neq_train, norm_error_report, select_m_prime  # noqa: E402
from .vq import QuantizerModel, aq_beam_encode, train_aq, train_opq, train_pq, train_quantizer, train_rq  # noqa: E402

__all__ = [
    "__version__",
    "KMeansResult", "lloyd_kmeans", "scalar_kmeans", "spherical_kmeans",
    "NormStats", "decompose", "norm_stats", "read_ivecs", "read_vecs", "synthesize", "write_vecs",
    "ConfigurationError", "DomainError", "FormatError", "IntegrityError", "NeqxError",
    "TruncatedFileError", "VersionError",
    "RecallCurve", "brute_force_topk", "recall_at", "recall_curve",
    "NeqModel", "neq_encode", "neq_ip", "neq_train", "norm_error_report", "select_m_prime",
    "QuantizerModel", "aq_beam_encode", "train_aq", "train_opq", "train_pq", "train_quantizer", "train_rq",
]
