import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openset_reid.errors import (
    BadMagic,
    DimensionMismatch,
    NonPositiveLambda,
    NoNegativePairs,
    NoPositivePairs,
    SingleClass,
)
from openset_reid.metrics import (
    TRAINERS,
    MetricKind,
    MetricModel,
    PairSet,
    kissme_matrix,
    load_model,
    register_trainer,
    save_model,
    score,
    score_matrix,
    train,
    train_euclidean,
    train_kissme,
    train_mahal,
    train_rrda,
)
from openset_reid.reduce import fit_pca

R2 = math.sqrt(2.0)


def random_models(d=5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((60, d))
    labels = np.repeat(np.arange(12), 5)
    X += rng.standard_normal((12, d))[labels] * 2
    i, j = np.triu_indices(60, 1)
    same = labels[i] == labels[j]
    pairs = PairSet(X, labels, np.column_stack([i[same], j[same]]), np.column_stack([i[~same], j[~same]])[:400])
    return [train_euclidean(d), train_mahal(pairs), train_kissme(pairs), train_rrda(X, labels, 0.5)]


# -- Euclidean ---------------------------------------------------------------


def test_euclidean_examples():
    m = train_euclidean(2)
    assert score(m, [0, 0], [3, 4]) == -25.0
    x = np.array([0.3, -1.2])
    assert score(m, x, x) == 0.0
    direction = np.array([0.6, 0.8])
    values = [score(m, x, x + t * direction) for t in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


# -- Mahalanobis ---------------------------------------------------------------


def test_mahal_hand_example():
    pairs = PairSet.from_differences([(1, 0), (-1, 0), (0, 2), (0, -2)])
    m = train_mahal(pairs, epsilon=1e-12)
    assert np.allclose(m.M, np.diag([2.0, 0.5]), atol=1e-8)


def test_mahal_isotropic_matches_euclidean_order():
    rng = np.random.default_rng(3)
    # differences on a scaled orthogonal frame give an exactly isotropic covariance
    diffs = np.vstack([np.eye(4), -np.eye(4)]) * 1.7
    m = train_mahal(PairSet.from_differences(diffs), epsilon=1e-6)
    e = train_euclidean(4)
    G, P = rng.standard_normal((30, 4)), rng.standard_normal((6, 4))
    assert np.array_equal(np.argsort(-m.score_matrix(G, P), 1), np.argsort(-e.score_matrix(G, P), 1))


def test_mahal_large_epsilon_limit():
    rng = np.random.default_rng(4)
    pairs = PairSet.from_differences(rng.standard_normal((20, 3)) * [1, 5, 0.2])
    m = train_mahal(pairs, epsilon=1e9)
    e = train_euclidean(3)
    G, P = rng.standard_normal((25, 3)), rng.standard_normal((5, 3))
    assert np.array_equal(np.argsort(-m.score_matrix(G, P), 1), np.argsort(-e.score_matrix(G, P), 1))


def test_mahal_needs_positives():
    with pytest.raises(NoPositivePairs):
        train_mahal(PairSet(np.zeros((2, 2)), np.array([1, 2]), np.empty((0, 2)), [(0, 1)]))


# -- KISSME --------------------------------------------------------------------


def test_kissme_hand_example_from_matrices():
    M = kissme_matrix(np.diag([1.0, 2.0]), np.diag([2.0, 1.0]))
    assert np.allclose(M, np.diag([0.5, 0.0]), atol=1e-12)


def test_kissme_hand_example_from_pairs():
    pos = [(R2, 0), (-R2, 0), (0, 2), (0, -2)]
    neg = [(2, 0), (-2, 0), (0, R2), (0, -R2)]
    m = train_kissme(PairSet.from_differences(pos, neg), epsilon=1e-12)
    assert np.allclose(m.M, np.diag([0.5, 0.0]), atol=1e-8)
    assert np.linalg.eigvalsh(m.M).min() >= -1e-10


def test_kissme_score_example():
    m = MetricModel(MetricKind.KISSME, 2, M=np.diag([0.5, 0.0]))
    # scored through the sqrt(M) embedding, so exact up to one rounding step
    assert score(m, [2, 5], [0, 0]) == pytest.approx(-2.0, rel=1e-15)


def test_kissme_identical_statistics_gives_zero():
    diffs = [(1, 0.5), (-1, -0.5), (0.3, 2), (-0.3, -2)]
    m = train_kissme(PairSet.from_differences(diffs, diffs), epsilon=1e-6)
    assert np.allclose(m.M, 0.0, atol=1e-12)
    assert score(m, [1, 2], [-3, 4]) == pytest.approx(0.0, abs=1e-12)


def test_kissme_aligns_with_discriminative_direction():
    rng = np.random.default_rng(11)
    angle = math.radians(30)
    u = np.array([math.cos(angle), math.sin(angle)])  # discriminative
    v = np.array([-math.sin(angle), math.cos(angle)])  # nuisance
    n = 4000
    pos = rng.normal(0, 0.2, n)[:, None] * u + rng.normal(0, 2.0, n)[:, None] * v
    neg = rng.normal(0, 3.0, n)[:, None] * u + rng.normal(0, 2.0, n)[:, None] * v
    m = train_kissme(PairSet.from_differences(pos, neg))
    vals, vecs = np.linalg.eigh(m.M)
    top = vecs[:, -1]
    err = math.degrees(math.acos(min(1.0, abs(float(top @ u)))))
    assert err < 5.0


def test_kissme_errors():
    with pytest.raises(NoNegativePairs):
        train_kissme(PairSet.from_differences([(1, 0), (0, 1)]))


# -- RRDA ------------------------------------------------------------------------


def test_rrda_normal_equations():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((40, 6))
    labels = rng.integers(0, 4, 40)
    lam = 0.7
    m = train_rrda(X, labels, lam)
    Xc = X - m.center
    Y = np.eye(4)[labels]
    lhs = (Xc.T @ Xc + lam * np.eye(6)) @ m.W
    assert np.linalg.norm(lhs - Xc.T @ Y) <= 1e-8 * np.linalg.norm(Xc.T @ Y)
    assert np.allclose(m.center, X.mean(0))


def test_rrda_separates_two_classes():
    rng = np.random.default_rng(6)
    X = np.vstack([rng.normal(0, 0.01, (20, 2)) + [1, 0], rng.normal(0, 0.01, (20, 2)) + [-1, 0]])
    labels = np.repeat([0, 1], 20)
    m = train_rrda(X, labels, 1.0)
    test_a = rng.normal(0, 0.01, (10, 2)) + [1, 0]
    test_b = rng.normal(0, 0.01, (10, 2)) + [-1, 0]
    same = m.score_matrix(test_a, test_a[:5]).min()
    cross = m.score_matrix(test_b, test_a[:5]).max()
    assert same > cross


def test_rrda_self_and_bounds():
    m = random_models(seed=1)[3]
    rng = np.random.default_rng(0)
    X = rng.standard_normal((20, 5)) * 3
    for x in X:
        assert score(m, x, x) == pytest.approx(1.0, abs=1e-12)
    S = m.score_matrix(X, X)
    assert S.min() >= -1.0 and S.max() <= 1.0
    # zero projection gives cosine 0
    assert score(m, m.center, X[0]) == 0.0


def test_rrda_scale_invariance():
    m = random_models(seed=2)[3]
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal(5), rng.standard_normal(5)
    scaled = score(m, m.center + 3.5 * (x - m.center), m.center + 0.2 * (y - m.center))
    assert scaled == pytest.approx(score(m, x, y), abs=1e-12)


def test_rrda_errors():
    with pytest.raises(SingleClass):
        train_rrda(np.zeros((3, 2)), [1, 1, 1])
    with pytest.raises(NonPositiveLambda):
        train_rrda(np.zeros((3, 2)), [1, 2, 1], lam=0.0)


# -- shared properties -------------------------------------------------------------


@pytest.mark.parametrize("idx", range(4))
def test_score_matrix_matches_pointwise_bit_exactly(idx):
    m = random_models()[idx]
    rng = np.random.default_rng(9)
    G, P = rng.standard_normal((5, 5)), rng.standard_normal((7, 5))
    S = score_matrix(m, G, P)
    assert S.shape == (7, 5)
    loop = np.array([[score(m, g, p) for g in G] for p in P])
    assert np.array_equal(S, loop)
    assert score_matrix(m, G[:1], P[:1])[0, 0] == score(m, G[0], P[0])


@pytest.mark.parametrize("idx", range(4))
def test_empty_probes(idx):
    m = random_models()[idx]
    assert score_matrix(m, np.zeros((4, 5)), np.empty((0, 5))).shape == (0, 4)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 3), st.integers(0, 2**31))
def test_symmetry(idx, seed):
    m = random_models()[idx]
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(5) * 4, rng.standard_normal(5) * 4
    assert score(m, x, y) == score(m, y, x)


@pytest.mark.parametrize("idx", [0, 1, 2])
def test_translation_invariance(idx):
    m = random_models()[idx]
    rng = np.random.default_rng(3)
    x, y, t = rng.standard_normal((3, 5))
    assert score(m, x + t, y + t) == pytest.approx(score(m, x, y), rel=1e-10, abs=1e-12)


def test_kissme_scores_non_positive():
    m = random_models()[2]
    X = np.random.default_rng(4).standard_normal((30, 5))
    S = m.score_matrix(X, X)
    assert S.max() <= 0.0
    assert np.all(np.diag(S) == 0.0)
    assert np.allclose(m.M, m.M.T, atol=1e-10)


def test_dimension_mismatch():
    m = random_models()[1]
    with pytest.raises(DimensionMismatch):
        score(m, np.zeros(5), np.zeros(4))
    with pytest.raises(DimensionMismatch):
        m.score_matrix(np.zeros((2, 3)), np.zeros((2, 3)))


def test_registry_extension_point():
    class Cosine:
        def score_matrix(self, gallery, probes):
            g = gallery / np.linalg.norm(gallery, axis=1, keepdims=True)
            p = probes / np.linalg.norm(probes, axis=1, keepdims=True)
            return p @ g.T

    register_trainer("cosine-test", lambda pairs, **_: Cosine())
    try:
        pairs = PairSet.from_differences([(1, 0), (0, 1)])
        model = train("cosine-test", pairs)
        assert model.score_matrix(np.eye(2), np.eye(2))[0, 0] == pytest.approx(1.0)
    finally:
        TRAINERS.pop("cosine-test")
    with pytest.raises(ValueError):
        train("nope", pairs)


@pytest.mark.parametrize("idx", range(4))
def test_model_file_round_trip(tmp_path, idx):
    m = random_models()[idx]
    pca = fit_pca(np.random.default_rng(0).standard_normal((10, 7)), 5)
    save_model(tmp_path / "m.bin", pca, m, seed=42, selection_digest="abc", trial_index=3)
    pca2, m2, meta = load_model(tmp_path / "m.bin")
    assert meta == {"seed": 42, "selection_digest": "abc", "trial_index": 3}
    assert m2.kind is m.kind and m2.d == m.d
    for name in ("M", "W", "center"):
        a, b = getattr(m, name), getattr(m2, name)
        assert (a is None and b is None) or np.array_equal(a, b)
    assert np.array_equal(pca.basis, pca2.basis) and np.array_equal(pca.mean, pca2.mean)
    X = np.random.default_rng(1).standard_normal((6, 5))
    assert np.array_equal(m.score_matrix(X, X), m2.score_matrix(X, X))


def test_model_file_bad_magic(tmp_path):
    (tmp_path / "m.bin").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(BadMagic):
        load_model(tmp_path / "m.bin")


def test_kind_values():
    assert [k.value for k in MetricKind] == ["euclidean", "mahal", "kissme", "rrda"]
    assert isinstance(train_euclidean(3), MetricModel)
