"""Similarity scorers: Euclidean, Mahalanobis, KISSME and ridge-regression
discriminant analysis (RRDA) with cosine scoring.

Every scorer returns "higher is more similar". Scores are computed from a
per-vector embedding so that bulk and pointwise scoring agree bit for bit:

* Euclidean: ``e(x) = x``, ``s = -||e(x) - e(y)||^2``
* Mahalanobis / KISSME: ``e(x) = L x`` with ``L^T L = M``, same score
* RRDA: ``e(x) = W^T (x - c) / ||W^T (x - c)||``, ``s = <e(x), e(y)>``
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    NoNegativePairs,
    NoPositivePairs,
    NonPositiveLambda,
    SingleClass,
    SingularCovariance,
    TruncatedFile,
    VersionUnsupported,
)
from .reduce import PcaModel

DEFAULT_EPSILON = 1e-6
DEFAULT_LAMBDA = 1.0
LAMBDA_GRID = tuple(10.0**k for k in range(-3, 4))
_CHUNK_ELEMENTS = 1 << 22


class MetricKind(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    MAHAL = "mahal"
    KISSME = "kissme"
    RRDA = "rrda"


@dataclass(frozen=True, eq=False)
class PairSet:
    """Training vectors with index pairs into them.

    ``positives`` and ``negatives`` are (k, 2) integer arrays of row indices
    into ``features`` / ``labels``.
    """

    features: np.ndarray | None
    labels: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    records: tuple = field(default=(), repr=False)

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int64)
        pos = np.asarray(self.positives, dtype=np.int64).reshape(-1, 2)
        neg = np.asarray(self.negatives, dtype=np.int64).reshape(-1, 2)
        if len(pos) and np.any(labels[pos[:, 0]] != labels[pos[:, 1]]):
            raise ValueError("positive pair with differing identities")
        if len(neg) and np.any(labels[neg[:, 0]] == labels[neg[:, 1]]):
            raise ValueError("negative pair with equal identities")
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 2 or len(feats) != len(labels):
                raise DimensionMismatch("features and labels disagree in length")
            object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "positives", pos)
        object.__setattr__(self, "negatives", neg)

    def with_features(self, features: np.ndarray) -> "PairSet":
        return replace(self, features=features)

    @classmethod
    def from_differences(cls, positive_diffs, negative_diffs=()) -> "PairSet":
        """Pairs (d_i, 0) realising the given difference vectors; for hand examples."""
        pos = np.atleast_2d(np.asarray(positive_diffs, dtype=np.float64))
        neg = np.asarray(negative_diffs, dtype=np.float64)
        neg = neg.reshape(-1, pos.shape[1])
        d = pos.shape[1]
        feats, labels, p_idx, n_idx = [], [], [], []
        label = 1
        for diff in pos:
            p_idx.append((len(feats), len(feats) + 1))
            feats += [diff, np.zeros(d)]
            labels += [label, label]
            label += 1
        for diff in neg:
            n_idx.append((len(feats), len(feats) + 1))
            feats += [diff, np.zeros(d)]
            labels += [label, label + 1]
            label += 2
        return cls(np.array(feats), np.array(labels), np.array(p_idx), np.array(n_idx))


def pair_covariance(features: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Mean outer product of pair differences."""
    d = features.shape[1]
    acc = np.zeros((d, d))
    step = max(1, _CHUNK_ELEMENTS // max(d, 1))
    for start in range(0, len(pairs), step):
        p = pairs[start : start + step]
        diff = features[p[:, 0]] - features[p[:, 1]]
        acc += diff.T @ diff
    return acc / len(pairs)


def regularize(cov: np.ndarray, epsilon: float) -> np.ndarray:
    d = cov.shape[0]
    return cov + epsilon * (np.trace(cov) / d) * np.eye(d)


def _spd_inverse(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
    if vals[0] <= max(vals[-1], 0.0) * 1e-15 or vals[-1] <= 0:
        raise SingularCovariance(f"covariance is singular (min eigenvalue {vals[0]:.3g})")
    inv = (vecs / vals) @ vecs.T
    return (inv + inv.T) / 2


def _psd_factor(M: np.ndarray) -> np.ndarray:
    """L with L^T L = M (negative eigenvalues clamped to zero)."""
    vals, vecs = np.linalg.eigh((M + M.T) / 2)
    vals = np.clip(vals, 0.0, None)
    return np.ascontiguousarray((vecs * np.sqrt(vals)).T)


def _linear_rows(X: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Row-wise ``A @ x`` with a reduction order independent of batch size."""
    k = A.shape[0]
    out = np.empty((len(X), k))
    step = max(1, _CHUNK_ELEMENTS // max(A.size, 1))
    for start in range(0, len(X), step):
        x = X[start : start + step]
        out[start : start + step] = np.sum(x[:, None, :] * A[None, :, :], axis=-1)
    return out


def _rows(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        return np.empty((0, d))
    return np.atleast_2d(X)


@dataclass(frozen=True, eq=False)
class MetricModel:
    kind: MetricKind
    d: int
    M: np.ndarray | None = None
    W: np.ndarray | None = None
    center: np.ndarray | None = None
    lam: float | None = None
    epsilon: float | None = None
    _factor: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", MetricKind(self.kind))
        if self.kind in (MetricKind.MAHAL, MetricKind.KISSME):
            object.__setattr__(self, "_factor", _psd_factor(self.M))
        elif self.kind is MetricKind.RRDA:
            object.__setattr__(self, "_factor", np.ascontiguousarray(self.W.T))

    def embed(self, X: np.ndarray) -> np.ndarray:
        X = _rows(X, self.d)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise DimensionMismatch(f"model expects dimension {self.d}, got {X.shape[1]}")
        if self.kind is MetricKind.EUCLIDEAN:
            return X.copy()
        if self.kind is MetricKind.RRDA:
            Z = _linear_rows(X - self.center, self._factor)
            norms = np.sqrt(np.sum(Z * Z, axis=-1))
            safe = np.where(norms > 0, norms, 1.0)
            return np.where(norms[:, None] > 0, Z / safe[:, None], 0.0)
        return _linear_rows(X, self._factor)

    def compare(self, probe_emb: np.ndarray, gallery_emb: np.ndarray) -> np.ndarray:
        """Scores between embedded probes (rows) and embedded gallery (columns)."""
        out = np.empty((len(probe_emb), len(gallery_emb)))
        if out.size == 0:
            return out
        step = max(1, _CHUNK_ELEMENTS // max(gallery_emb.size, 1))
        for start in range(0, len(probe_emb), step):
            p = probe_emb[start : start + step, None, :]
            if self.kind is MetricKind.RRDA:
                out[start : start + step] = np.clip(np.sum(p * gallery_emb[None], axis=-1), -1.0, 1.0)
            else:
                diff = p - gallery_emb[None]
                out[start : start + step] = -np.sum(diff * diff, axis=-1)
        return out

    def score_matrix(self, gallery: np.ndarray, probes: np.ndarray) -> np.ndarray:
        return self.compare(self.embed(_rows(probes, self.d)), self.embed(_rows(gallery, self.d)))


def train_euclidean(d: int) -> MetricModel:
    if d < 1:
        raise ValueError("dimension must be positive")
    return MetricModel(MetricKind.EUCLIDEAN, d)


def train_mahal(pairs: PairSet, epsilon: float = DEFAULT_EPSILON) -> MetricModel:
    """Inverse of the (ridge-stabilised) covariance of positive-pair differences."""
    if len(pairs.positives) == 0:
        raise NoPositivePairs("Mahalanobis training needs positive pairs")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    sigma_s = regularize(pair_covariance(pairs.features, pairs.positives), epsilon)
    M = _spd_inverse(sigma_s)
    return MetricModel(MetricKind.MAHAL, M.shape[0], M=M, epsilon=epsilon)


def kissme_matrix(sigma_s: np.ndarray, sigma_d: np.ndarray) -> np.ndarray:
    """PSD projection of ``inv(sigma_s) - inv(sigma_d)``."""
    M0 = _spd_inverse(sigma_s) - _spd_inverse(sigma_d)
    vals, vecs = np.linalg.eigh((M0 + M0.T) / 2)
    M = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return (M + M.T) / 2


def train_kissme(pairs: PairSet, epsilon: float = DEFAULT_EPSILON) -> MetricModel:
    if len(pairs.positives) == 0:
        raise NoPositivePairs("KISSME needs positive pairs")
    if len(pairs.negatives) == 0:
        raise NoNegativePairs("KISSME needs negative pairs")
    sigma_s = regularize(pair_covariance(pairs.features, pairs.positives), epsilon)
    sigma_d = regularize(pair_covariance(pairs.features, pairs.negatives), epsilon)
    M = kissme_matrix(sigma_s, sigma_d)
    return MetricModel(MetricKind.KISSME, M.shape[0], M=M, epsilon=epsilon)


def train_rrda(samples: np.ndarray, labels: np.ndarray, lam: float = DEFAULT_LAMBDA) -> MetricModel:
    """Ridge regression of centred samples onto one-hot class indicators.

    ``W = (X^T X + lam I)^{-1} X^T Y``; the sample mean is stored as the centre.
    """
    if not lam > 0:
        raise NonPositiveLambda(f"lambda must be positive, got {lam}")
    X = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels)
    classes, y = np.unique(labels, return_inverse=True)
    if len(classes) < 2:
        raise SingleClass("RRDA needs at least two classes")
    center = X.mean(axis=0)
    Xc = X - center
    Y = np.zeros((len(X), len(classes)))
    Y[np.arange(len(X)), y] = 1.0
    d = X.shape[1]
    W = np.linalg.solve(Xc.T @ Xc + lam * np.eye(d), Xc.T @ Y)
    return MetricModel(MetricKind.RRDA, d, W=W, center=center, lam=float(lam))


def score(model, x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"{x.shape} vs {y.shape}")
    return float(model.score_matrix(y[None, :], x[None, :])[0, 0])


def score_matrix(model, gallery, probes) -> np.ndarray:
    """Entry (i, j) is ``score(model, gallery[j], probes[i])``."""
    return model.score_matrix(gallery, probes)


Trainer = Callable[..., Any]


def _train_euclidean_from_pairs(pairs: PairSet, **_: Any) -> MetricModel:
    return train_euclidean(pairs.features.shape[1])


def _train_mahal_from_pairs(pairs: PairSet, epsilon: float = DEFAULT_EPSILON, **_: Any) -> MetricModel:
    return train_mahal(pairs, epsilon)


def _train_kissme_from_pairs(pairs: PairSet, epsilon: float = DEFAULT_EPSILON, **_: Any) -> MetricModel:
    return train_kissme(pairs, epsilon)


def _train_rrda_from_pairs(pairs: PairSet, lam: float = DEFAULT_LAMBDA, **_: Any) -> MetricModel:
    return train_rrda(pairs.features, pairs.labels, lam)


# Extension point: any callable (pairs, **params) returning an object with
# ``score_matrix(gallery, probes)`` can be registered here.
TRAINERS: dict[str, Trainer] = {
    MetricKind.EUCLIDEAN.value: _train_euclidean_from_pairs,
    MetricKind.MAHAL.value: _train_mahal_from_pairs,
    MetricKind.KISSME.value: _train_kissme_from_pairs,
    MetricKind.RRDA.value: _train_rrda_from_pairs,
}


def register_trainer(name: str, trainer: Trainer) -> None:
    TRAINERS[name] = trainer


def train(kind: str, pairs: PairSet, **params: Any):
    try:
        trainer = TRAINERS[str(getattr(kind, "value", kind))]
    except KeyError:
        raise ValueError(f"unknown metric {kind!r}; choose from {sorted(TRAINERS)}") from None
    return trainer(pairs, **params)


# -- model file ----------------------------------------------------------------

MODEL_MAGIC = b"OPRM"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sII")


def save_model(
    path: str | Path,
    pca: PcaModel,
    metric: MetricModel,
    seed: int,
    selection_digest: str,
    trial_index: int | None = None,
) -> None:
    """Binary container: magic, version, JSON header length, JSON header, float64 arrays."""
    arrays: list[tuple[str, np.ndarray]] = [
        ("pca.mean", pca.mean),
        ("pca.basis", pca.basis),
        ("pca.eigenvalues", pca.eigenvalues),
    ]
    for name in ("M", "W", "center"):
        value = getattr(metric, name)
        if value is not None:
            arrays.append((f"metric.{name}", value))
    header = {
        "kind": metric.kind.value,
        "d": metric.d,
        "lambda": metric.lam,
        "epsilon": metric.epsilon,
        "seed": int(seed),
        "selection_digest": selection_digest,
        "trial_index": trial_index,
        "arrays": [[name, list(np.shape(a))] for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path: str | Path) -> tuple[PcaModel, MetricModel, dict]:
    blob = Path(path).read_bytes()
    if len(blob) < _MODEL_HEADER.size:
        raise TruncatedFile(str(path))
    magic, version, hlen = _MODEL_HEADER.unpack_from(blob, 0)
    if magic != MODEL_MAGIC:
        raise BadMagic(f"{path}: magic {magic!r}")
    if version != MODEL_VERSION:
        raise VersionUnsupported(f"{path}: version {version}")
    off = _MODEL_HEADER.size
    if len(blob) < off + hlen:
        raise TruncatedFile(str(path))
    header = json.loads(blob[off : off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        if len(blob) < off + 8 * count:
            raise TruncatedFile(f"{path}: array {name} is cut short")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    pca = PcaModel(arrays["pca.mean"], arrays["pca.basis"], arrays["pca.eigenvalues"])
    metric = MetricModel(
        MetricKind(header["kind"]),
        header["d"],
        M=arrays.get("metric.M"),
        W=arrays.get("metric.W"),
        center=arrays.get("metric.center"),
        lam=header["lambda"],
        epsilon=header["epsilon"],
    )
    meta = {k: header[k] for k in ("seed", "selection_digest", "trial_index")}
    return pca, metric, meta
