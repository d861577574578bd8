import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openset_reid.errors import DimensionMismatch, OutDimTooLarge, TooFewSamples
from openset_reid.reduce import fit_pca, project, reconstruct


def dense_oracle(X):
    """Eigen-decomposition of the n-1 covariance, descending."""
    Xc = X - X.mean(0)
    cov = Xc.T @ Xc / (len(X) - 1)
    vals, vecs = np.linalg.eigh(cov)
    return vals[::-1], vecs[:, ::-1]


def test_rank_one_line():
    t = np.array([-2.0, -1.0, 0.5, 1.0, 3.0])
    model = fit_pca(np.column_stack([t, 2 * t]), 1)
    assert np.allclose(model.basis[:, 0], np.array([1, 2]) / np.sqrt(5), atol=1e-12)
    full = fit_pca(np.column_stack([t, 2 * t]), 2)
    assert abs(full.eigenvalues[1]) <= 1e-12


def test_reconstruction_loss_equals_discarded_eigenvalues():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((20, 50)) @ np.diag(np.linspace(3, 0.1, 50))
    vals, _ = dense_oracle(X)
    for k in (1, 5, 10, 19):
        model = fit_pca(X, k)
        R = reconstruct(model, project(model, X))
        # mean over samples of squared error, with the same n-1 divisor
        loss = np.sum((X - R) ** 2) / (len(X) - 1)
        assert loss == pytest.approx(vals[k:].clip(0).sum(), rel=1e-6)
        assert np.allclose(model.eigenvalues, vals[:k], rtol=1e-8)


def test_full_basis_is_exact():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((30, 8))
    model = fit_pca(X, 8)
    assert np.allclose(reconstruct(model, project(model, X)), X, atol=1e-8)


@pytest.mark.parametrize("shape, k", [((50, 20), 20), ((20, 50), 19), ((12, 300), 7)])
def test_orthonormal_and_sorted(shape, k):
    X = np.random.default_rng(2).standard_normal(shape)
    model = fit_pca(X, k)
    assert np.allclose(model.basis.T @ model.basis, np.eye(k), atol=1e-8)
    assert np.all(np.diff(model.eigenvalues) <= 1e-12)
    assert np.all(model.eigenvalues >= -1e-10)


def test_projection_statistics():
    X = np.random.default_rng(3).standard_normal((50, 20)) * np.arange(1, 21)
    model = fit_pca(X, 10)
    Z = project(model, X)
    assert np.all(np.abs(Z.mean(0)) <= 1e-8)
    assert np.allclose(Z.var(0, ddof=1), model.eigenvalues, rtol=1e-6)


def test_gram_path_matches_covariance_path():
    X = np.random.default_rng(4).standard_normal((15, 40))
    model = fit_pca(X, 10)
    vals, vecs = dense_oracle(X)
    assert np.allclose(model.eigenvalues, vals[:10], rtol=1e-9)
    # same subspace, same sign convention
    signs = np.sign(vecs[np.argmax(np.abs(vecs[:, :10]), 0), np.arange(10)])
    assert np.allclose(model.basis, vecs[:, :10] * signs, atol=1e-8)


def test_gram_path_completes_basis_for_rank_deficient_data():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((10, 2)) @ rng.standard_normal((2, 30))
    model = fit_pca(X, 6)
    assert np.allclose(model.basis.T @ model.basis, np.eye(6), atol=1e-8)
    assert np.all(model.eigenvalues[2:] == 0.0)


def test_sign_convention():
    model = fit_pca(np.random.default_rng(6).standard_normal((40, 6)), 6)
    idx = np.argmax(np.abs(model.basis), axis=0)
    assert np.all(model.basis[idx, np.arange(6)] > 0)


def test_project_examples():
    X = np.random.default_rng(7).standard_normal((25, 6))
    model = fit_pca(X, 4)
    assert np.allclose(project(model, model.mean), 0.0)
    for i in range(4):
        e = project(model, model.mean + model.basis[:, i])
        assert np.allclose(e, np.eye(4)[i], atol=1e-12)
    x = np.random.default_rng(8).standard_normal(6)
    oracle = np.array([sum(model.basis[j, i] * (x[j] - model.mean[j]) for j in range(6)) for i in range(4)])
    assert np.allclose(project(model, x), oracle, rtol=1e-10, atol=1e-14)


def test_errors():
    with pytest.raises(TooFewSamples):
        fit_pca(np.zeros((1, 5)), 1)
    with pytest.raises(OutDimTooLarge):
        fit_pca(np.random.default_rng(0).random((5, 10)), 5)
    with pytest.raises(OutDimTooLarge):
        fit_pca(np.random.default_rng(0).random((50, 3)), 4)
    model = fit_pca(np.random.default_rng(0).random((5, 3)), 2)
    with pytest.raises(DimensionMismatch):
        project(model, np.zeros(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 25), st.integers(1, 25), st.integers(0, 2**31))
def test_eigenvalues_match_oracle_property(n, d, seed):
    X = np.random.default_rng(seed).standard_normal((n, d))
    k = min(n - 1, d)
    model = fit_pca(X, k)
    vals, _ = dense_oracle(X)
    assert np.allclose(model.eigenvalues, vals[:k].clip(0), rtol=1e-7, atol=1e-9)
    assert np.allclose(model.basis.T @ model.basis, np.eye(k), atol=1e-8)
