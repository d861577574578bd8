"""Seeded synthetic data and exhaustive-enumeration oracles.

Feature model: identity ``i`` has a latent vector ``mu_i ~ N(0, I)``; an image
of ``i`` seen by camera ``c`` is ``A_c mu_i + b_c + noise``. The noise has a
low-dimensional high-variance "nuisance" part so that plain Euclidean matching
is measurably worse than a learned metric.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Dataset, ImageRecord, Session
from .errors import DegenerateConfig, EmptyGallery
from .evaluation import EvalOutcome
from .features import PixelImage
from .protocol import build_gallery_probes


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 160
    n_cameras: int = 6
    images_per_identity_per_camera: int = 3
    latent_dim: int = 20
    distortion: float = 0.3  # spread of A_c around the identity
    offset_magnitude: float = 1.0  # ||b_c|| relative to sqrt(latent_dim)
    noise_sigma: float = 0.5
    nuisance_dims: int = 4
    nuisance_sigma: float = 1.0
    presence_probability: float = 0.5
    train_identity_fraction: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        counts = (self.n_identities, self.n_cameras, self.images_per_identity_per_camera, self.latent_dim)
        if min(counts) < 1:
            raise DegenerateConfig("all counts must be >= 1")
        if self.n_identities < 2:
            raise DegenerateConfig("need at least two identities for disjoint sessions")
        if self.noise_sigma < 0 or self.nuisance_sigma < 0 or self.distortion < 0 or self.offset_magnitude < 0:
            raise DegenerateConfig("magnitudes must be non-negative")
        if not 0.0 < self.presence_probability <= 1.0:
            raise DegenerateConfig("presence_probability must lie in (0, 1]")
        if not 0.0 < self.train_identity_fraction < 1.0:
            raise DegenerateConfig("train_identity_fraction must lie in (0, 1)")
        if not 0 <= self.nuisance_dims <= self.latent_dim:
            raise DegenerateConfig("nuisance_dims must be within [0, latent_dim]")


def _rng(seed: int, *parts: int) -> np.random.Generator:
    return np.random.default_rng([seed, *parts])


def _layout(config: SynthConfig) -> list[tuple[int, Session, list[int]]]:
    """(identity, session, cameras) per identity; every identity gets >= 2 views when possible."""
    n_train = max(1, min(config.n_identities - 1, round(config.n_identities * config.train_identity_fraction)))
    out = []
    for pid in range(1, config.n_identities + 1):
        rng = _rng(config.seed, 1, pid)
        present = rng.random(config.n_cameras) < config.presence_probability
        need = min(2, config.n_cameras)
        if present.sum() < need:
            for cam in rng.permutation(config.n_cameras):
                present[cam] = True
                if present.sum() >= need:
                    break
        cams = [int(c) + 1 for c in np.flatnonzero(present)]
        out.append((pid, Session.TRAIN if pid <= n_train else Session.TEST, cams))
    return out


@dataclass(frozen=True, eq=False)
class CameraModel:
    A: np.ndarray
    b: np.ndarray


def camera_models(config: SynthConfig) -> dict[int, CameraModel]:
    d = config.latent_dim
    models = {}
    for cam in range(1, config.n_cameras + 1):
        rng = _rng(config.seed, 2, cam)
        A = np.eye(d) + config.distortion * rng.standard_normal((d, d)) / math.sqrt(d)
        direction = rng.standard_normal(d)
        b = config.offset_magnitude * math.sqrt(d) * direction / np.linalg.norm(direction)
        models[cam] = CameraModel(A, b)
    return models


def _nuisance_basis(config: SynthConfig) -> np.ndarray:
    rng = _rng(config.seed, 3)
    q, _ = np.linalg.qr(rng.standard_normal((config.latent_dim, config.latent_dim)))
    return q[:, : config.nuisance_dims]


def generate_features(config: SynthConfig = SynthConfig()) -> Dataset:
    config.validate()
    cams = camera_models(config)
    nuisance = _nuisance_basis(config)
    records, rows = [], []
    frame = 0
    for pid, session, views in _layout(config):
        mu = _rng(config.seed, 4, pid).standard_normal(config.latent_dim)
        for cam in views:
            for j in range(config.images_per_identity_per_camera):
                rng = _rng(config.seed, 5, pid, cam, j)
                noise = config.noise_sigma * rng.standard_normal(config.latent_dim)
                noise += nuisance @ (config.nuisance_sigma * rng.standard_normal(config.nuisance_dims))
                rows.append(cams[cam].A @ mu + cams[cam].b + noise)
                records.append(ImageRecord(pid, cam, session, frame))
                frame += 1
    return Dataset(tuple(records), np.array(rows))


# -- images ----------------------------------------------------------------------


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb((h % 360.0) / 360.0, s, v))


def render_person(
    torso_hue: float,
    legs_hue: float,
    rng: np.random.Generator,
    saturation: float = 0.8,
    value: float = 0.8,
    gain: float = 1.0,
    noise: float = 0.03,
    size: tuple[int, int] = (48, 128),
) -> PixelImage:
    """Two-band figure (torso / legs) with a head on a noisy grey background."""
    w, h = size
    img = 0.45 + 0.08 * rng.standard_normal((h, w, 3)).clip(-2, 2)
    img = np.repeat(img.mean(axis=2, keepdims=True), 3, axis=2)
    dx = int(rng.integers(-3, 4))
    yy, xx = np.mgrid[0:h, 0:w]
    head = ((yy - 13) / 9.0) ** 2 + ((xx - (24 + dx)) / 6.0) ** 2 <= 1.0
    img[head] = np.array([0.85, 0.65, 0.5])
    torso = (yy >= 22) & (yy < 66) & (np.abs(xx - (24 + dx)) <= 12)
    legs = (yy >= 66) & (yy < 124) & (np.abs(xx - (24 + dx)) <= 10) & (np.abs(xx - (24 + dx)) >= 2)
    img[torso] = _hsv_to_rgb(torso_hue, saturation, value)
    img[legs] = _hsv_to_rgb(legs_hue, saturation, value * 0.8)
    img = img * gain + noise * rng.standard_normal(img.shape)
    return PixelImage(np.clip(img, 0.0, 1.0))


def generate_images(config: SynthConfig = SynthConfig()) -> Dataset:
    """Rendered 48x128 crops; records carry a :class:`PixelImage` as source."""
    config.validate()
    records = []
    frame = 0
    cam_params = {}
    for cam in range(1, config.n_cameras + 1):
        rng = _rng(config.seed, 6, cam)
        cam_params[cam] = (1.0 - config.distortion * 0.5 * rng.random(), 30.0 * config.distortion * rng.standard_normal())
    for pid, session, views in _layout(config):
        ident = _rng(config.seed, 7, pid)
        torso_hue, legs_hue = ident.uniform(0, 360, size=2)
        sat, val = ident.uniform(0.5, 1.0), ident.uniform(0.5, 0.95)
        for cam in views:
            gain, shift = cam_params[cam]
            for j in range(config.images_per_identity_per_camera):
                rng = _rng(config.seed, 8, pid, cam, j)
                img = render_person(
                    torso_hue + shift, legs_hue + shift, rng, sat, val, gain, max(config.noise_sigma * 0.1, 0.0)
                )
                records.append(ImageRecord(pid, cam, session, frame, img))
                frame += 1
    return Dataset(tuple(records))


# -- oracles ---------------------------------------------------------------------


def oracle_evaluate(
    scores,
    gallery_labels: Sequence[int],
    probe_labels: Sequence[int],
    probe_keys: Sequence | None = None,
    trial_index: int = 0,
    gallery_camera: int = 0,
) -> EvalOutcome:
    """g*, rank and max score for each probe by explicit double loops."""
    gl = [int(x) for x in gallery_labels]
    pl = [int(x) for x in probe_labels]
    if not gl:
        raise EmptyGallery("gallery is empty")
    table = [[float(scores[i][j]) for j in range(len(gl))] for i in range(len(pl))]
    keys = list(range(len(pl))) if probe_keys is None else list(probe_keys)
    g_keys, g_best_idx, g_best, g_rank, g_max = [], [], [], [], []
    i_keys, i_max = [], []
    for i, p in enumerate(pl):
        row = table[i]
        top = row[0]
        for s in row:
            if s > top:
                top = s
        best_j = None
        for j, g in enumerate(gl):
            if g == p and (best_j is None or row[j] > row[best_j]):
                best_j = j
        if best_j is None:
            i_keys.append(keys[i])
            i_max.append(top)
            continue
        rank = 1
        for j, g in enumerate(gl):
            if g != p and row[j] > row[best_j]:
                rank += 1
        g_keys.append(keys[i])
        g_best_idx.append(best_j)
        g_best.append(row[best_j])
        g_rank.append(rank)
        g_max.append(top)
    return EvalOutcome(
        trial_index=trial_index,
        gallery_camera=gallery_camera,
        gallery_size=len(gl),
        genuine_keys=tuple(g_keys),
        best_gallery=np.array(g_best_idx, dtype=np.int64),
        best_genuine=np.array(g_best, dtype=np.float64),
        ranks=np.array(g_rank, dtype=np.int64),
        genuine_max=np.array(g_max, dtype=np.float64),
        impostor_keys=tuple(i_keys),
        impostor_max=np.array(i_max, dtype=np.float64),
    )


def oracle_dir(scores, gallery_labels, probe_labels, tau: float, k: int) -> float:
    o = oracle_evaluate(scores, gallery_labels, probe_labels)
    hits = 0
    for s, r in zip(o.best_genuine.tolist(), o.ranks.tolist()):
        if r <= k and s >= tau:
            hits += 1
    return hits / len(o.ranks)


def oracle_far(scores, gallery_labels, probe_labels, tau: float) -> float:
    o = oracle_evaluate(scores, gallery_labels, probe_labels)
    hits = 0
    for m in o.impostor_max.tolist():
        if m >= tau:
            hits += 1
    return hits / len(o.impostor_max)


def oracle_roc(scores, gallery_labels, probe_labels, k: int) -> list[tuple[float, float]]:
    o = oracle_evaluate(scores, gallery_labels, probe_labels)
    distinct: list[float] = []
    for m in o.impostor_max.tolist():
        if m not in distinct:
            distinct.append(m)
    taus = [math.inf] + sorted(distinct, reverse=True) + [-math.inf]
    return [
        (oracle_far(scores, gallery_labels, probe_labels, t), oracle_dir(scores, gallery_labels, probe_labels, t, k))
        for t in taus
    ]


def oracle_threshold(scores, gallery_labels, probe_labels, far_level: float) -> float:
    if far_level >= 1.0:
        return -math.inf
    o = oracle_evaluate(scores, gallery_labels, probe_labels)
    best = math.inf
    for t in o.impostor_max.tolist():
        if oracle_far(scores, gallery_labels, probe_labels, t) <= far_level and t < best:
            best = t
    return best


def oracle_cmc(scores, gallery_labels, probe_labels, far_level: float, max_rank: int) -> list[float]:
    tau = oracle_threshold(scores, gallery_labels, probe_labels, far_level)
    return [oracle_dir(scores, gallery_labels, probe_labels, tau, k) for k in range(1, max_rank + 1)]


def closed_set_cmc(ranks: Sequence[int], n_probes: int, max_rank: int) -> list[float]:
    """Cumulative histogram of ranks (the classical CMC)."""
    hist = [0] * (max_rank + 1)
    for r in ranks:
        if r <= max_rank:
            hist[r] += 1
    out, acc = [], 0
    for k in range(1, max_rank + 1):
        acc += hist[k]
        out.append(acc / n_probes)
    return out


@dataclass(frozen=True, eq=False)
class ScoreInstance:
    gallery_labels: np.ndarray
    probe_labels: np.ndarray
    scores: np.ndarray  # probes x gallery
    gallery_camera: int = 1
    meta: dict = field(default_factory=dict)


def random_score_instance(
    seed: int,
    max_identities: int = 6,
    max_cameras: int = 3,
    max_images: int = 3,
    require_both: bool = True,
) -> ScoreInstance:
    """Small gallery/probe split with random (sometimes tied) scores."""
    rng = np.random.default_rng(seed)
    while True:
        n_ids = int(rng.integers(1, max_identities + 1))
        n_cams = int(rng.integers(2, max_cameras + 1))
        records, frame = [], 0
        for pid in range(1, n_ids + 1):
            for cam in range(1, n_cams + 1):
                if rng.random() < 0.3:
                    continue
                for _ in range(int(rng.integers(1, max_images + 1))):
                    records.append(ImageRecord(pid, cam, Session.TEST, frame))
                    frame += 1
        ds = Dataset(tuple(records))
        cam = int(rng.integers(1, n_cams + 1))
        try:
            g, pg, pn = build_gallery_probes(ds, set(range(1, n_ids + 1)), cam)
        except EmptyGallery:
            continue
        if require_both and (len(pg) == 0 or len(pn) == 0):
            continue
        probes = np.concatenate([pg, pn]).astype(np.int64)
        probes = probes[rng.permutation(len(probes))]
        if rng.random() < 0.5:
            scores = rng.integers(0, 4, size=(len(probes), len(g))).astype(np.float64) / 4
        else:
            scores = rng.standard_normal((len(probes), len(g)))
        return ScoreInstance(ds.persons[g], ds.persons[probes], scores, cam)
