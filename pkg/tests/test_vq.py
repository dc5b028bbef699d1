import itertools

import numpy as np
import pytest

from neqx.clustering import lloyd_kmeans
from neqx.errors import ConfigurationError, DomainError
from neqx.vq import (
    QuantizerModel,
    aq_beam_encode,
    ip_table,
    least_squares_codebooks,
    table_ip,
    train_aq,
    train_opq,
    train_pq,
    train_quantizer,
    train_rq,
)


def _err(model, X):
    return float(((X - model.reconstruct(model.encode(X))) ** 2).sum(1).mean())


def _pool_data(rng, M, K, s, n):
    pools = rng.normal(size=(M, K, s)) * 5
    idx = rng.integers(K, size=(n, M))
    X = np.concatenate([pools[m][idx[:, m]] for m in range(M)], axis=1)
    return pools, X


def test_pq_recovers_codeword_pools(rng):
    pools, X = _pool_data(rng, 2, 4, 3, 400)
    model = train_pq(X, 2, 4, seed=1)
    assert _err(model, X) < 1e-9
    for m in range(2):
        got = sorted(map(tuple, model.codebooks[m].round(4)))
        want = sorted(map(tuple, pools[m].astype(np.float32).astype(float).round(4)))
        assert np.allclose(got, want, atol=1e-3)


def test_pq_m1_is_kmeans(rng):
    X = rng.normal(size=(300, 4))
    model = train_pq(X, 1, 8, seed=5)
    km = lloyd_kmeans(X, 8, seed=_first_seed(5))
    assert np.isclose(model.metadata["train_error"] * 300, km.objective)
    assert np.allclose(model.codebooks[0], km.centroids, atol=1e-6)


def _first_seed(seed):
    from neqx.vq import sub_seed

    return sub_seed(seed, 0)


def test_pq_bad_split():
    with pytest.raises(ConfigurationError):
        train_pq(np.ones((10, 4)), 8, 2)


def test_opq_axis_aligned_not_worse_than_pq(rng):
    X = rng.normal(size=(600, 8)) * np.array([3, 3, 1, 1, 2, 2, 0.5, 0.5])
    pq = train_pq(X, 4, 8, seed=0)
    opq = train_opq(X, 4, 8, rounds=5, seed=0)
    assert opq.metadata["history"][-1] <= pq.metadata["train_error"] + 1e-9


def _rotated_pools(rng):
    _, X = _pool_data(rng, 2, 4, 4, 800)
    X = X + 0.05 * rng.normal(size=X.shape)
    Q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    return X, X @ Q.T


def test_opq_beats_pq_on_rotated_data(rng):
    _, rotated = _rotated_pools(rng)
    assert _err(train_opq(rotated, 2, 4, rounds=10, seed=0), rotated) < _err(train_pq(rotated, 2, 4, seed=0), rotated)


@pytest.mark.xfail(strict=False, reason="alternation from R = I often stalls in a local optimum on discrete pool data")
def test_opq_undoes_rotation(rng):
    _, X = _pool_data(rng, 2, 4, 4, 800)
    X = X + 0.05 * rng.normal(size=X.shape)
    Q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    base = _err(train_pq(X, 2, 4, seed=0), X)
    rotated = X @ Q.T
    pq_rot = _err(train_pq(rotated, 2, 4, seed=0), rotated)
    opq_rot = _err(train_opq(rotated, 2, 4, rounds=20, seed=0), rotated)
    assert pq_rot > base
    assert opq_rot <= 1.05 * base + 1e-12


def test_opq_rounds_monotone_and_orthonormal(rng):
    C = rng.normal(size=(8, 8))
    X = rng.normal(size=(800, 8)) @ C
    one = train_opq(X, 4, 8, rounds=1, seed=2)
    ten = train_opq(X, 4, 8, rounds=10, seed=2)
    h = ten.metadata["history"]
    assert all(b <= a + 1e-6 for a, b in zip(h, h[1:]))
    assert h[-1] <= one.metadata["history"][-1] + 1e-9
    R = ten.rotation
    assert np.abs(R.T @ R - np.eye(8)).max() <= 1e-6


def test_opq_identity_rotation_equals_pq(rng):
    X = rng.normal(size=(200, 4))
    pq = train_pq(X, 2, 4, seed=0)
    opq = QuantizerModel("opq", 2, 4, 4, pq.codebooks, rotation=np.eye(4))
    codes = pq.encode(X)
    assert np.array_equal(opq.encode(X), codes)
    assert np.allclose(opq.reconstruct(codes), pq.reconstruct(codes))


def test_rq_m1_is_kmeans_and_zero_residual(rng):
    X = rng.normal(size=(200, 3))
    rq = train_rq(X, 1, 6, seed=4)
    assert np.isclose(rq.metadata["history"][0] * 200, lloyd_kmeans(X, 6, seed=_first_seed(4)).objective)
    rows = rng.normal(size=(5, 3))
    Y = rows[rng.integers(5, size=100)]
    assert train_rq(Y, 2, 5, seed=0).metadata["history"][0] < 1e-20


def test_rq_error_decreases_with_m(rng):
    X = rng.normal(size=(1000, 8))
    errs = [_err(train_rq(X, M, 16, seed=0), X) for M in (2, 4, 8)]
    assert errs[0] > errs[1] > errs[2]
    h = train_rq(X, 8, 16, seed=0).metadata["history"]
    assert all(b <= a for a, b in zip(h, h[1:]))


def _additive(rng, M, K, d):
    books = rng.normal(size=(M, K, d))
    return QuantizerModel("aq", M, K, d, books, beam_width=4)


def _exhaustive(books, x):
    M, K, _ = books.shape
    best, code = np.inf, None
    for c in itertools.product(range(K), repeat=M):
        e = float(((x - sum(books[m][c[m]] for m in range(M))) ** 2).sum())
        if e < best:
            best, code = e, c
    return np.array(code), best


def test_aq_recovers_constructed_code(rng):
    model = _additive(rng, 2, 8, 6)
    x = model.codebooks[0][3] + model.codebooks[1][7]
    assert aq_beam_encode(model, x, 8).tolist() == [3, 7]


def test_aq_beam1_is_greedy(rng):
    model = _additive(rng, 3, 8, 5)
    X = rng.normal(size=(50, 5))
    codes = aq_beam_encode(model, X, 1)
    for x, c in zip(X, codes):
        res = x.copy()
        want = []
        for m in range(3):
            j = int(np.argmin(((res - model.codebooks[m]) ** 2).sum(1)))
            want.append(j)
            res = res - model.codebooks[m][j]
        assert c.tolist() == want


@pytest.mark.parametrize("M,K", [(2, 4), (2, 8)])
def test_aq_full_beam_is_exhaustive(rng, M, K):
    model = _additive(rng, M, K, 4)
    for x in rng.normal(size=(30, 4)):
        code = aq_beam_encode(model, x, K**M)
        want, best = _exhaustive(model.codebooks, x)
        got = float(((x - model.reconstruct(code)) ** 2).sum())
        assert abs(got - best) <= 1e-12 * max(1.0, best)
        assert np.array_equal(code, want) or abs(got - best) == 0


def test_aq_beam_never_worse_than_greedy(rng):
    model = _additive(rng, 4, 8, 6)
    X = rng.normal(size=(200, 6))
    g = ((X - model.reconstruct(aq_beam_encode(model, X, 1))) ** 2).sum(1)
    for w in (2, 4, 16):
        b = ((X - model.reconstruct(aq_beam_encode(model, X, w))) ** 2).sum(1)
        assert np.all(b <= g + 1e-12)


def test_least_squares_hand_solved():
    X = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [1.0, 3.0], [3.0, 1.0], [0.5, 0.5]])
    codes = np.array([[0, 0], [0, 1], [1, 0], [1, 1], [1, 1], [0, 0]])
    books, singular = least_squares_codebooks(X, codes, 2)
    # independent design-matrix solve, minimum-norm via the pseudo-inverse
    B = np.zeros((6, 4))
    for i, (a, b) in enumerate(codes):
        B[i, a] = 1
        B[i, 2 + b] = 1
    C = np.linalg.pinv(B) @ X
    assert singular
    assert np.allclose(books.reshape(4, 2), C, atol=1e-6)
    assert np.allclose(B @ books.reshape(4, 2), B @ C, atol=1e-6)


def test_aq_m1_is_kmeans(rng):
    X = rng.normal(size=(300, 3))
    aq = train_aq(X, 1, 6, rounds=2, seed=3)
    km = lloyd_kmeans(X, 6, seed=_first_seed(3))
    assert np.isclose(aq.metadata["train_error"] * 300, km.objective, rtol=1e-6)


def test_aq_not_worse_than_rq_and_monotone(rng):
    X = rng.normal(size=(1500, 8))
    rq = train_rq(X, 4, 16, seed=0)
    aq = train_aq(X, 4, 16, rounds=3, seed=0)
    h = aq.metadata["history"]
    assert all(b <= a + 1e-6 for a, b in zip(h, h[1:]))
    assert _err(aq, X) <= _err(rq, X) + 1e-6
    assert aq.metadata["init"] == "rq"


@pytest.mark.parametrize("kind", ["pq", "opq", "rq", "aq"])
def test_table_matches_reconstruction(rng, kind):
    X = rng.normal(size=(500, 8))
    Q = rng.normal(size=(40, 8))
    model = train_quantizer(kind, X, 2, 8, seed=0, opq_rounds=3, aq_rounds=1)
    codes = model.encode(X)
    direct = Q @ model.reconstruct(codes).T
    fast = model.score(Q, codes)
    assert np.all(np.abs(fast - direct) <= 1e-4 * np.abs(direct) + 1e-9)
    tab = ip_table(model, Q[0])
    assert tab.shape == (2, 8)
    assert np.isclose(table_ip(tab, codes[0]), direct[0, 0])
    assert not ip_table(model, np.zeros(8)).any()


def test_pq_encode_is_exhaustive_argmin(rng):
    model = train_pq(rng.normal(size=(200, 4)), 2, 4, seed=0)
    recons = {c: model.reconstruct(np.array(c)) for c in itertools.product(range(4), repeat=2)}
    for x in rng.normal(size=(50, 4)):
        best = min(recons, key=lambda c: (((x - recons[c]) ** 2).sum(), c))
        assert tuple(model.encode(x)) == best


def test_pq_subspace_independence(rng):
    model = train_pq(rng.normal(size=(200, 4)), 2, 4, seed=0)
    x = rng.normal(size=4)
    y = x.copy()
    y[2:] = rng.normal(size=2)
    assert model.encode(x)[0] == model.encode(y)[0]


def test_rq_table_of_own_codeword(rng):
    model = train_rq(rng.normal(size=(200, 4)), 2, 4, seed=0)
    c = model.codebooks[0][2]
    assert np.isclose(ip_table(model, c)[0, 2], c @ c)


def test_table_ip_arithmetic():
    tab = np.array([[1.5, 0.0], [0.0, 2.5]])
    assert table_ip(tab, np.array([0, 1])) == 4.0
    assert table_ip(np.zeros((2, 2)), np.array([1, 1])) == 0.0


def test_errors(rng):
    model = train_rq(rng.normal(size=(50, 4)), 2, 4, seed=0)
    with pytest.raises(DomainError):
        model.encode(np.ones(5))
    with pytest.raises(DomainError):
        model.reconstruct(np.array([0, 4]))
    with pytest.raises(ConfigurationError):
        train_quantizer("lsq", np.ones((4, 2)), 1, 2)


def test_reconstruct_consistent_with_training(rng):
    X = rng.normal(size=(400, 6))
    model = train_rq(X, 3, 8, seed=0)
    assert abs(_err(model, X) - model.metadata["train_error"]) <= 1e-3 * model.metadata["train_error"]
