"""Principal component analysis fitted per trial."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, OutDimTooLarge, TooFewSamples

EIGEN_FLOOR = -1e-10


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray  # (d_in,)
    basis: np.ndarray  # (d_in, d_out), orthonormal columns
    eigenvalues: np.ndarray  # (d_out,), non-increasing

    @property
    def d_in(self) -> int:
        return int(self.basis.shape[0])

    @property
    def d_out(self) -> int:
        return int(self.basis.shape[1])


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def _complete_basis(basis: np.ndarray, n_missing: int) -> np.ndarray:
    """Append ``n_missing`` orthonormal columns orthogonal to ``basis``."""
    d = basis.shape[0]
    extra = []
    current = basis
    for j in range(d):
        if len(extra) == n_missing:
            break
        e = np.zeros(d)
        e[j] = 1.0
        for _ in range(2):
            e = e - current @ (current.T @ e)
        norm = np.linalg.norm(e)
        if norm > 1e-6:
            e /= norm
            extra.append(e)
            current = np.column_stack([current, e])
    return current


def fit_pca(samples: np.ndarray, out_dim: int) -> PcaModel:
    """Top ``out_dim`` principal directions of the sample covariance (divisor n-1).

    When there are fewer samples than dimensions the eigenproblem is solved on
    the n x n Gram matrix instead of the d x d covariance.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewSamples("PCA needs at least two samples")
    n, d = X.shape
    if out_dim < 1 or out_dim > min(n - 1, d):
        raise OutDimTooLarge(f"out_dim={out_dim} must be in [1, {min(n - 1, d)}]")
    mean = X.mean(axis=0)
    Xc = X - mean

    if n < d:
        gram = (Xc @ Xc.T) / (n - 1)
        vals, vecs = np.linalg.eigh((gram + gram.T) / 2)
        order = np.argsort(vals)[::-1][:out_dim]
        vals, vecs = vals[order], vecs[:, order]
        keep = vals > max(vals[0], 0.0) * 1e-12
        basis = Xc.T @ vecs[:, keep]
        basis /= np.linalg.norm(basis, axis=0)
        if not keep.all():
            # Null-space directions: any orthonormal completion, variance zero.
            basis = _complete_basis(basis, int((~keep).sum()))
            vals = np.where(keep, vals, 0.0)
    else:
        cov = (Xc.T @ Xc) / (n - 1)
        vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
        order = np.argsort(vals)[::-1][:out_dim]
        vals, basis = vals[order], vecs[:, order]

    vals = np.where(vals < 0, 0.0, vals)
    basis = _fix_signs(basis)
    return PcaModel(mean=mean, basis=basis, eigenvalues=vals)


def project(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """``basis.T @ (x - mean)`` for a single vector or for each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.d_in:
        raise DimensionMismatch(f"expected length {model.d_in}, got {x.shape[-1]}")
    return (x - model.mean) @ model.basis


def reconstruct(model: PcaModel, z: np.ndarray) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) @ model.basis.T + model.mean
