import numpy as np
import pytest

from neqx.data import synthesize
from neqx.errors import ConfigurationError
from neqx.neq import (
    NeqModel,
    OpCounter,
    evaluate_m_prime,
    neq_encode,
    neq_ip,
    neq_train,
    norm_error_report,
    select_m_prime,
    vq_ip,
)
from neqx.vq import QuantizerModel, train_rq


@pytest.fixture(scope="module")
def data():
    return synthesize(2000, 16, "longtail", seed=3)


@pytest.fixture(scope="module")
def ne_rq(data):
    return neq_train(data, "rq", 4, 1, 16, seed=0)


def _exact_direction_model(dirs):
    # one codeword per item direction, so xbar equals the unit direction exactly
    K = dirs.shape[0]
    base = QuantizerModel("rq", 1, K, dirs.shape[1], dirs[None, :, :].copy())
    return base


def test_exact_directions_quantize_raw_norms():
    rng = np.random.default_rng(0)
    dirs = rng.normal(size=(6, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    norms = np.array([0.5, 1.0, 2.0, 3.0, 0.5, 2.0])
    X = dirs * norms[:, None]
    model = NeqModel(_exact_direction_model(dirs), np.array([[0.5, 1.0, 2.0, 3.0, 9.0, 9.0]]), 2, 1, 6, 3)
    codes, l = model.relative_norms(X)
    assert np.allclose(l, norms)
    rec = model.reconstruct(model.encode(X))
    assert np.allclose(np.linalg.norm(rec, axis=1), norms, atol=1e-12)
    q = rng.normal(size=3)
    table = model.ip_table(q)
    for x, c in zip(X, model.encode(X)):
        assert abs(neq_ip(table, c, model) - q @ x) <= 1e-6


def test_trains_and_shapes(ne_rq, data):
    codes = neq_encode(ne_rq, data)
    assert codes.shape == (2000, 4)
    assert ne_rq.base.M == 3 and ne_rq.norm_codebooks.shape == (1, 16)
    assert codes.max() < 16


def test_bad_mprime(data):
    for mp in (0, 4):
        with pytest.raises(ConfigurationError):
            neq_train(data, "rq", 4, mp, 16)


def test_constant_norms_beat_rq_norm_error():
    X = synthesize(3000, 16, "constant", seed=1)
    ne = neq_train(X, "rq", 4, 1, 16, seed=0)
    rq = train_rq(X, 4, 16, seed=0)
    assert norm_error_report(ne, X) < norm_error_report(rq, X)


def test_norm_codeword_hit_gives_exact_norm(ne_rq, data):
    x = data[5]
    dcodes, l = ne_rq.relative_norms(x[None])
    book = ne_rq.norm_codebooks[0]
    scaled = x * (book[3] / l[0])
    code = ne_rq.encode(scaled)
    assert code[0] == 3
    assert abs(np.linalg.norm(ne_rq.reconstruct(code)) - np.linalg.norm(scaled)) <= 1e-6 * np.linalg.norm(scaled)
    assert np.array_equal(code[1:], dcodes[0])


@pytest.mark.parametrize("c", [0.5, 2.0, 7.3])
def test_scale_equivariance_of_direction_codes(ne_rq, data, c):
    a = ne_rq.encode(data[:200])
    b = ne_rq.encode(c * data[:200])
    assert np.array_equal(a[:, 1:], b[:, 1:])


def test_two_norm_codebooks_residual_matches_training(data):
    model = neq_train(data, "rq", 5, 2, 16, seed=0)
    _, l = model.relative_norms(data)
    lq = model.quantized_norms(model.encode(data))
    resid = np.abs(l - lq)
    assert resid.max() <= model.metadata["train_norm_residual_max"] + 1e-12
    assert np.isclose(resid.mean(), model.metadata["train_norm_residual_mean"])


def test_norm_absorption(ne_rq, data):
    codes = ne_rq.encode(data)
    rec = ne_rq.reconstruct(codes)
    xbar = ne_rq.base.reconstruct(codes[:, 1:])
    lq = ne_rq.quantized_norms(codes)
    assert np.allclose(np.linalg.norm(rec, axis=1), lq * np.linalg.norm(xbar, axis=1))


def test_neq_ip_arithmetic():
    base = QuantizerModel("rq", 1, 2, 2, np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    model = NeqModel(base, np.array([[2.0, 5.0]]), 2, 1, 2, 2)
    table = model.ip_table(np.array([0.5, 0.0]))
    assert neq_ip(table, np.array([0, 0]), model) == 1.0
    assert neq_ip(model.ip_table(np.array([0.0, 0.0])), np.array([1, 1]), model) == 0.0


@pytest.mark.parametrize("kind", ["pq", "opq", "rq", "aq"])
def test_neq_ip_matches_reconstruction(data, kind):
    model = neq_train(data[:1000], kind, 4, 1, 16, seed=0, opq_rounds=3, aq_rounds=1)
    rng = np.random.default_rng(1)
    Q = rng.normal(size=(50, 16))
    codes = model.encode(data[:1000])
    rec = model.reconstruct(codes)
    for q in Q[:10]:
        table = model.ip_table(q)
        got = np.array([neq_ip(table, c, model) for c in codes[:100]])
        want = rec[:100] @ q
        assert np.all(np.abs(got - want) <= 1e-4 * np.abs(want) + 1e-9)
    direct = Q @ rec.T
    assert np.all(np.abs(model.score(Q, codes) - direct) <= 1e-4 * np.abs(direct) + 1e-9)


def test_operation_counts(ne_rq, data):
    code = ne_rq.encode(data[0])
    c = OpCounter()
    neq_ip(ne_rq.ip_table(data[1]), code, ne_rq, c)
    M = ne_rq.M
    assert c.lookups == M and c.multiplications == 1
    # M values combine with M - 1 binary operations in total
    assert c.additions + c.multiplications == M - 1
    v = OpCounter()
    rq = train_rq(data[:500], 4, 8, seed=0)
    vq_ip(rq.ip_table(data[1]), rq.encode(data[0]), v)
    assert (v.lookups, v.additions, v.multiplications) == (4, 3, 0)


def test_zero_item_gets_nearest_zero_codeword(ne_rq):
    code = ne_rq.encode(np.zeros(16))
    book = ne_rq.norm_codebooks[0]
    assert code[0] == int(np.argmin(np.abs(book)))


def test_pq_base_with_uneven_split(data):
    model = neq_train(data, "pq", 4, 1, 16, seed=0)  # 16 features over 3 direction codebooks
    assert model.padded_d == 18
    codes = model.encode(data)
    rec = model.reconstruct(codes)
    assert rec.shape == data.shape
    q = np.random.default_rng(0).normal(size=16)
    assert np.allclose(model.score(q[None], codes)[0], rec @ q)


def test_exact_norm_ablation():
    X = synthesize(1500, 8, "longtail", seed=2)
    model = neq_train(X, "rq", 6, K=256, seed=0, exact_norm=True, max_iters=5)
    codes = model.encode(X)
    _, l = model.relative_norms(X)
    assert np.array_equal(model.quantized_norms(codes), l.astype(np.float32).astype(np.float64))
    assert model.mprime == 4


def test_unnormalized_ablation(data):
    model = neq_train(data, "rq", 4, 1, 16, seed=0, normalize=False)
    assert model.encode(data).shape == (2000, 4)


def test_select_m_prime(data):
    Q = synthesize(30, 16, "longtail", seed=9)
    assert select_m_prime(data, "rq", 2, 16, Q) == 1
    table = evaluate_m_prime(data[:800], "rq", 4, 16, Q, budget=50, seed=0)
    chosen = select_m_prime(data[:800], "rq", 4, 16, Q, budget=50, seed=0)
    assert set(table) == {1, 2, 3}
    assert all(table[chosen] >= r for r in table.values())
