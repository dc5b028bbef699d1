"""How quantization error splits into norm and angular parts, and what each does to inner products.

For an item ``x``, its approximation ``x_tilde`` and a query ``q``:

* inner product error ``u = |q.x - q.x_tilde| / |q.x|``
* norm error ``gamma = | ||x|| - ||x_tilde|| | / ||x||``
* angular error ``eta = 1 - cos(x, x_tilde)``

``x_hat`` keeps the direction of ``x`` with the norm of ``x_tilde``;
``x_bar`` keeps the norm of ``x`` with the direction of ``x_tilde``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "ErrorTriple",
    "AngleConfig",
    "error_triple",
    "error_terms",
    "construct_hat",
    "construct_bar",
    "cos_gamma",
    "geometric_vectors",
    "cos_gamma_geometric",
    "theorem1_region",
    "verify_theorem1",
    "Figure2Study",
    "figure2_study",
    "euclidean_error",
    "euclidean_study",
    "zero_intercept_slope",
    "pearson",
]

# pairs with |q.x| below this are left out of scatter studies
MIN_ABS_IP = 1e-12


@dataclass(frozen=True)
class ErrorTriple:
    u: float  # NaN when q.x == 0
    gamma: float
    eta: float


@dataclass(frozen=True)
class AngleConfig:
    alpha: float  # angle between x and x_bar
    beta: float  # angle between x_bar and q
    t: float  # dihedral angle between the (x, x_bar) and (x_bar, q) planes


def _vec(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64)


def error_triple(x, x_tilde, q) -> ErrorTriple:
    x, xt, q = _vec(x), _vec(x_tilde), _vec(q)
    nx, nt = np.linalg.norm(x), np.linalg.norm(xt)
    if nx == 0 or nt == 0:
        raise DomainError("error terms need non-zero x and x_tilde")
    ip = float(q @ x)
    u = abs(ip - float(q @ xt)) / abs(ip) if ip != 0 else math.nan
    gamma = abs(nx - nt) / nx
    eta = 1.0 - float(x @ xt) / (nx * nt)
    return ErrorTriple(u, float(gamma), float(eta))


def error_terms(X, Xt, Q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise ``(u, gamma, eta)`` for aligned batches of items, approximations and queries."""
    X, Xt, Q = np.atleast_2d(_vec(X)), np.atleast_2d(_vec(Xt)), np.atleast_2d(_vec(Q))
    nx = np.linalg.norm(X, axis=1)
    nt = np.linalg.norm(Xt, axis=1)
    ip = np.einsum("ij,ij->i", Q, X)
    ipt = np.einsum("ij,ij->i", Q, Xt)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(ip != 0, np.abs(ip - ipt) / np.abs(ip), np.nan)
        gamma = np.abs(nx - nt) / nx
        eta = 1.0 - np.einsum("ij,ij->i", X, Xt) / (nx * nt)
    return u, gamma, eta


def construct_hat(x, x_tilde) -> np.ndarray:
    """``||x_tilde|| * x / ||x||`` (row-wise for 2-D input)."""
    x, xt = _vec(x), _vec(x_tilde)
    nx = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(nx == 0):
        raise DomainError("x_hat is undefined for a zero x")
    return np.linalg.norm(xt, axis=-1, keepdims=True) * (x / nx)


def construct_bar(x, x_tilde) -> np.ndarray:
    """``||x|| * x_tilde / ||x_tilde||`` (row-wise for 2-D input)."""
    x, xt = _vec(x), _vec(x_tilde)
    nt = np.linalg.norm(xt, axis=-1, keepdims=True)
    if np.any(nt == 0):
        raise DomainError("x_bar is undefined for a zero x_tilde")
    return np.linalg.norm(x, axis=-1, keepdims=True) * (xt / nt)


def cos_gamma(cfg: AngleConfig) -> float:
    """Cosine of the angle between ``x`` and ``q`` in closed form."""
    a, b, t = cfg.alpha, cfg.beta, cfg.t
    return math.sin(a) * math.sin(b) * math.cos(t) + math.cos(a) * math.cos(b)


def geometric_vectors(cfg: AngleConfig, x_norm: float = 1.0, q_norm: float = 1.0):
    """Explicit 3-D ``(x, x_bar, q)`` realizing the configuration.

    ``x_bar`` lies on the z axis, ``x`` in the x-z plane at angle ``alpha``,
    and ``q`` at angle ``beta`` from ``x_bar`` in a plane turned by ``t``.
    ``x`` and ``x_bar`` share the norm ``x_norm``.
    """
    a, b, t = cfg.alpha, cfg.beta, cfg.t
    xbar = np.array([0.0, 0.0, x_norm])
    x = x_norm * np.array([math.sin(a), 0.0, math.cos(a)])
    q = q_norm * np.array([math.sin(b) * math.cos(t), math.sin(b) * math.sin(t), math.cos(b)])
    return x, xbar, q


def cos_gamma_geometric(cfg: AngleConfig) -> float:
    x, _, q = geometric_vectors(cfg)
    return float(x @ q / (np.linalg.norm(x) * np.linalg.norm(q)))


def theorem1_region(alpha: float, beta: float) -> tuple[float, float]:
    """Bounds on ``cos t`` inside which the inner product error of ``x_bar`` stays below its angular error."""
    half = math.pi / 2
    if not (0 < alpha < half and 0 < beta < half):
        raise DomainError("alpha and beta must lie in the open interval (0, pi/2)")
    ca = math.cos(alpha)
    scale = math.cos(beta) / (math.sin(alpha) * math.sin(beta))
    return scale * (1.0 / (2.0 - ca) - ca), scale * (1.0 / ca - ca)


def verify_theorem1(samples: int, seed: int = 0, region: str = "inside", tol: float = 1e-9) -> int:
    """Monte-Carlo count of configurations where ``u > eta + tol``.

    ``region="inside"`` samples ``cos t`` uniformly in the feasible interval
    (clipped to ``[-1, 1]``) and should find none. ``region="above"`` samples
    strictly between the upper bound and 1, where the bound is violated.
    Configurations whose interval is empty are redrawn. Norms of ``x`` and
    ``q`` are drawn at random since the errors are scale-free.
    """
    if samples < 1:
        raise DomainError("samples must be >= 1")
    if region not in ("inside", "above"):
        raise DomainError("region must be 'inside' or 'above'")
    rng = np.random.default_rng(seed)
    eps = 1e-12
    violations = 0
    drawn = 0
    while drawn < samples:
        a, b = rng.uniform(eps, math.pi / 2 - eps, size=2)
        lo, hi = theorem1_region(a, b)
        if region == "inside":
            lo_c, hi_c = max(lo, -1.0), min(hi, 1.0)
        else:
            lo_c, hi_c = hi, 1.0
        if not lo_c < hi_c:
            continue
        c = rng.uniform(lo_c, hi_c)
        if region == "above" and c <= hi:
            continue
        cfg = AngleConfig(a, b, math.acos(c))
        x, xbar, q = geometric_vectors(cfg, x_norm=rng.uniform(0.1, 10.0), q_norm=rng.uniform(0.1, 10.0))
        tri = error_triple(x, xbar, q)
        drawn += 1
        if math.isnan(tri.u) or tri.u > tri.eta + tol:
            violations += 1
    return violations


def zero_intercept_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of a line through the origin."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    den = float(x @ x)
    return float(x @ y) / den if den > 0 else math.nan


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 2:
        return math.nan
    xc, yc = x - x.mean(), y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    return float(xc @ yc) / den if den > 0 else math.nan


@dataclass
class Figure2Study:
    norm_error: np.ndarray  # gamma per (query, item) pair
    norm_ip_error: np.ndarray  # u of x_hat
    angular_error: np.ndarray  # eta per pair
    angular_ip_error: np.ndarray  # u of x_bar
    slope_norm: float
    slope_angular: float
    pearson_norm: float
    pearson_angular: float
    metadata: dict = field(default_factory=dict)

    def rows(self):
        """``(kind, error, ip_error)`` rows, norm cloud first."""
        for e, u in zip(self.norm_error, self.norm_ip_error):
            yield "norm", float(e), float(u)
        for e, u in zip(self.angular_error, self.angular_ip_error):
            yield "angular", float(e), float(u)

    def summary(self) -> dict:
        return {
            "pairs": int(self.norm_error.size),
            "slope_norm": self.slope_norm,
            "slope_angular": self.slope_angular,
            "pearson_norm": self.pearson_norm,
            "pearson_angular": self.pearson_angular,
            **self.metadata,
        }


def _pairs(data, queries, k, truth):
    from .evaluation import brute_force_topk

    X = np.atleast_2d(_vec(data))
    Q = np.atleast_2d(_vec(queries))
    if truth is None:
        truth = brute_force_topk(X, Q, k)
    truth = np.asarray(truth)[:, :k]
    qi = np.repeat(np.arange(Q.shape[0]), truth.shape[1])
    return X, Q, qi, truth.ravel()


def figure2_study(model, data, queries, k: int = 20, truth=None, codes=None) -> Figure2Study:
    """Norm vs angular error against inner product error over (query, true top-k item) pairs.

    The norm cloud uses ``x_hat`` and the angular cloud uses ``x_bar``. Slopes
    are zero-intercept least-squares fits. Pairs with ``|q.x| < 1e-12`` or a
    zero reconstruction are skipped.
    """
    X, Q, qi, xi = _pairs(data, queries, k, truth)
    if codes is None:
        recon_all = model.reconstruct(model.encode(X))
    else:
        recon_all = model.reconstruct(codes)
    x, xt, q = X[xi], recon_all[xi], Q[qi]
    ip = np.einsum("ij,ij->i", q, x)
    keep = (np.abs(ip) >= MIN_ABS_IP) & (np.linalg.norm(xt, axis=1) > 0) & (np.linalg.norm(x, axis=1) > 0)
    x, xt, q = x[keep], xt[keep], q[keep]
    u_hat, gamma, _ = error_terms(x, construct_hat(x, xt), q)
    u_bar, _, _ = error_terms(x, construct_bar(x, xt), q)
    _, _, eta = error_terms(x, xt, q)
    return Figure2Study(
        norm_error=gamma,
        norm_ip_error=u_hat,
        angular_error=eta,
        angular_ip_error=u_bar,
        slope_norm=zero_intercept_slope(gamma, u_hat),
        slope_angular=zero_intercept_slope(eta, u_bar),
        pearson_norm=pearson(gamma, u_hat),
        pearson_angular=pearson(eta, u_bar),
        metadata={"intercept": "zero", "k": k, "skipped_pairs": int((~keep).sum())},
    )


def euclidean_error(x, x_tilde, q) -> float:
    """``| ||x - q|| - ||x_tilde - q|| | / ||x - q||``."""
    x, xt, q = _vec(x), _vec(x_tilde), _vec(q)
    base = float(np.linalg.norm(x - q))
    if base == 0:
        raise DomainError("Euclidean error is undefined when x == q")
    return abs(base - float(np.linalg.norm(xt - q))) / base


def euclidean_study(model, data, queries, k: int = 20, codes=None) -> dict:
    """Slopes of the Euclidean distance error against norm and angular error.

    Pairs are each query's ``k`` Euclidean nearest neighbours.
    """
    X = np.atleast_2d(_vec(data))
    Q = np.atleast_2d(_vec(queries))
    d2 = (Q**2).sum(1)[:, None] - 2 * Q @ X.T + (X**2).sum(1)[None, :]
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
    qi = np.repeat(np.arange(Q.shape[0]), k)
    xi = nn.ravel()
    recon = model.reconstruct(model.encode(X) if codes is None else codes)
    x, xt, q = X[xi], recon[xi], Q[qi]
    base = np.linalg.norm(x - q, axis=1)
    keep = (base > 0) & (np.linalg.norm(xt, axis=1) > 0)
    x, xt, q, base = x[keep], xt[keep], q[keep], base[keep]
    _, gamma, eta = error_terms(x, xt, q)
    xh, xb = construct_hat(x, xt), construct_bar(x, xt)
    v_hat = np.abs(base - np.linalg.norm(xh - q, axis=1)) / base
    v_bar = np.abs(base - np.linalg.norm(xb - q, axis=1)) / base
    return {
        "slope_norm": zero_intercept_slope(gamma, v_hat),
        "slope_angular": zero_intercept_slope(eta, v_bar),
        "pairs": int(keep.sum()),
    }
