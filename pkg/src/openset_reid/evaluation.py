"""Open-set identification measures: detection-and-identification rate (DIR)
versus false accept rate (FAR), ROC at a fixed rank, CMC at a fixed FAR, and
aggregation over cameras and trials.

Conventions:

* rank(p) = 1 + number of *other-identity* gallery images scoring strictly
  above the best same-identity score, so ties favour the probe.
* The operating threshold for a FAR level is the smallest impostor score
  whose FAR does not exceed the level; +inf if none does, -inf at FAR = 1.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Dataset
from .errors import (
    EmptyGallery,
    EmptyGenuineProbeSet,
    EmptyImpostorProbeSet,
    MissingFeatures,
    MissingResults,
    NoOutcomes,
)

log = logging.getLogger(__name__)

REPORT_FARS = (0.01, 0.10, 1.0)
REPORT_RANKS = (1, 10)
ROC_FAR_GRID = tuple(round(m * 10.0**e, 6) for e in (-3, -2, -1) for m in range(1, 10)) + (1.0,)
CMC_MAX_RANK = 50


def _key_out(key):
    return list(key) if isinstance(key, tuple) else key


def _key_in(key):
    return tuple(key) if isinstance(key, list) else key


@dataclass(frozen=True)
class ProbeOutcome:
    key: tuple
    genuine: bool
    max_gallery_score: float
    best_genuine_score: float | None = None
    rank: int | None = None
    best_gallery: int | None = None


@dataclass(frozen=True, eq=False)
class EvalOutcome:
    """Score evidence for one (trial, gallery camera).

    Genuine arrays are aligned with ``genuine_keys``; ``best_gallery`` holds the
    gallery position of g* (first position on ties).
    """

    trial_index: int
    gallery_camera: int
    gallery_size: int
    genuine_keys: tuple
    best_gallery: np.ndarray
    best_genuine: np.ndarray
    ranks: np.ndarray
    genuine_max: np.ndarray
    impostor_keys: tuple
    impostor_max: np.ndarray

    @property
    def n_genuine(self) -> int:
        return len(self.ranks)

    @property
    def n_impostor(self) -> int:
        return len(self.impostor_max)

    def probes(self) -> list[ProbeOutcome]:
        out = [
            ProbeOutcome(k, True, float(m), float(s), int(r), int(g))
            for k, g, s, r, m in zip(
                self.genuine_keys, self.best_gallery, self.best_genuine, self.ranks, self.genuine_max
            )
        ]
        out += [ProbeOutcome(k, False, float(m)) for k, m in zip(self.impostor_keys, self.impostor_max)]
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EvalOutcome):
            return NotImplemented
        arrays = ("best_gallery", "best_genuine", "ranks", "genuine_max", "impostor_max")
        return (
            (self.trial_index, self.gallery_camera, self.gallery_size) == (other.trial_index, other.gallery_camera, other.gallery_size)
            and tuple(self.genuine_keys) == tuple(other.genuine_keys)
            and tuple(self.impostor_keys) == tuple(other.impostor_keys)
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
        )

    def to_json(self) -> dict:
        return {
            "trial": self.trial_index,
            "camera": self.gallery_camera,
            "gallery_size": self.gallery_size,
            "genuine": [
                [_key_out(k), int(g), float(s), int(r), float(m)]
                for k, g, s, r, m in zip(
                    self.genuine_keys, self.best_gallery, self.best_genuine, self.ranks, self.genuine_max
                )
            ],
            "impostor": [[_key_out(k), float(m)] for k, m in zip(self.impostor_keys, self.impostor_max)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "EvalOutcome":
        gen = data["genuine"]
        imp = data["impostor"]
        return cls(
            trial_index=data["trial"],
            gallery_camera=data["camera"],
            gallery_size=data["gallery_size"],
            genuine_keys=tuple(_key_in(g[0]) for g in gen),
            best_gallery=np.array([g[1] for g in gen], dtype=np.int64),
            best_genuine=np.array([g[2] for g in gen], dtype=np.float64),
            ranks=np.array([g[3] for g in gen], dtype=np.int64),
            genuine_max=np.array([g[4] for g in gen], dtype=np.float64),
            impostor_keys=tuple(_key_in(i[0]) for i in imp),
            impostor_max=np.array([i[1] for i in imp], dtype=np.float64),
        )


def evaluate_scores(
    scores: np.ndarray,
    gallery_labels: Sequence[int],
    probe_labels: Sequence[int],
    probe_keys: Sequence | None = None,
    trial_index: int = 0,
    gallery_camera: int = 0,
) -> EvalOutcome:
    """Outcome from a probes x gallery score matrix.

    Probes whose label occurs in the gallery are genuine, the rest impostors.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gl = np.asarray(gallery_labels)
    pl = np.asarray(probe_labels)
    if len(gl) == 0:
        raise EmptyGallery("gallery is empty")
    if scores.shape != (len(pl), len(gl)):
        raise ValueError(f"score matrix {scores.shape} does not match {len(pl)} probes x {len(gl)} gallery")
    keys = tuple(range(len(pl))) if probe_keys is None else tuple(probe_keys)
    same = pl[:, None] == gl[None, :]
    genuine = same.any(axis=1)

    s_gen = scores[genuine]
    same_gen = same[genuine]
    masked = np.where(same_gen, s_gen, -np.inf)
    best_idx = np.argmax(masked, axis=1) if len(s_gen) else np.empty(0, dtype=np.int64)
    best = masked[np.arange(len(s_gen)), best_idx]
    ranks = 1 + np.sum(~same_gen & (s_gen > best[:, None]), axis=1)

    return EvalOutcome(
        trial_index=trial_index,
        gallery_camera=gallery_camera,
        gallery_size=len(gl),
        genuine_keys=tuple(k for k, g in zip(keys, genuine) if g),
        best_gallery=best_idx.astype(np.int64),
        best_genuine=best,
        ranks=ranks.astype(np.int64),
        genuine_max=s_gen.max(axis=1) if len(s_gen) else np.empty(0),
        impostor_keys=tuple(k for k, g in zip(keys, genuine) if not g),
        impostor_max=scores[~genuine].max(axis=1) if (~genuine).any() else np.empty(0),
    )


def evaluate_partition(model, partition, camera: int, dataset: Dataset) -> EvalOutcome:
    """Score gallery camera ``camera`` of ``partition`` with ``model``.

    ``dataset.features`` must hold the (reduced) vectors the model consumes.
    """
    if dataset.features is None:
        raise MissingFeatures("dataset carries no feature vectors")
    if camera not in partition.cameras:
        raise EmptyGallery(f"camera {camera} has no gallery in trial {partition.trial_index}")
    gallery, genuine, impostor = partition.cameras[camera]
    if len(gallery) == 0:
        raise EmptyGallery(f"camera {camera} has no gallery in trial {partition.trial_index}")
    probes = np.concatenate([genuine, impostor]).astype(np.int64)
    scores = model.score_matrix(dataset.features[gallery], dataset.features[probes])
    return evaluate_scores(
        scores,
        dataset.persons[gallery],
        dataset.persons[probes],
        probe_keys=[tuple(dataset.records[i].key_json()) for i in probes],
        trial_index=partition.trial_index,
        gallery_camera=camera,
    )


def _count_at_least(sorted_values: np.ndarray, tau) -> np.ndarray:
    return len(sorted_values) - np.searchsorted(sorted_values, tau, side="left")


def dir_rate(outcome: EvalOutcome, tau: float, k: int) -> float:
    """Fraction of genuine probes with rank <= k and best genuine score >= tau."""
    if outcome.n_genuine == 0:
        raise EmptyGenuineProbeSet("no genuine probes")
    hits = int(np.sum((outcome.ranks <= k) & (outcome.best_genuine >= tau)))
    return hits / outcome.n_genuine


def far_rate(outcome: EvalOutcome, tau: float) -> float:
    """Fraction of impostor probes whose maximum gallery score is >= tau."""
    if outcome.n_impostor == 0:
        raise EmptyImpostorProbeSet("no impostor probes")
    return int(np.sum(outcome.impostor_max >= tau)) / outcome.n_impostor


def roc_curve(outcome: EvalOutcome, k: int) -> list[tuple[float, float]]:
    """(FAR, DIR) at every distinct impostor score plus +/-inf, by increasing FAR."""
    if outcome.n_genuine == 0:
        raise EmptyGenuineProbeSet("no genuine probes")
    if outcome.n_impostor == 0:
        raise EmptyImpostorProbeSet("no impostor probes")
    imp = np.sort(outcome.impostor_max)
    taus = np.concatenate([[np.inf], np.unique(imp)[::-1], [-np.inf]])
    gen = np.sort(outcome.best_genuine[outcome.ranks <= k])
    fars = _count_at_least(imp, taus)
    dirs = _count_at_least(gen, taus)
    return [(int(f) / outcome.n_impostor, int(d) / outcome.n_genuine) for f, d in zip(fars, dirs)]


def threshold_at_far(outcome: EvalOutcome, far_level: float) -> float:
    if not 0.0 < far_level <= 1.0:
        raise ValueError(f"FAR level must be in (0, 1], got {far_level}")
    if far_level >= 1.0:
        return -math.inf
    if outcome.n_impostor == 0:
        raise EmptyImpostorProbeSet("no impostor probes")
    imp = np.sort(outcome.impostor_max)
    candidates = np.unique(imp)
    ok = _count_at_least(imp, candidates) / outcome.n_impostor <= far_level
    if not ok.any():
        return math.inf
    return float(candidates[np.argmax(ok)])


def cmc_at_far(outcome: EvalOutcome, far_level: float, max_rank: int) -> list[float]:
    """DIR at the FAR-derived threshold for ranks 1..max_rank."""
    if outcome.n_genuine == 0:
        raise EmptyGenuineProbeSet("no genuine probes")
    tau = threshold_at_far(outcome, far_level)
    accepted = outcome.ranks[outcome.best_genuine >= tau]
    hist = np.bincount(np.minimum(accepted, max_rank + 1), minlength=max_rank + 2)
    cum = np.cumsum(hist[1 : max_rank + 1])
    return [int(c) / outcome.n_genuine for c in cum]


# -- aggregation -----------------------------------------------------------------


@dataclass(frozen=True)
class AggregateStats:
    mean: float
    std: float
    fused: float
    trial_values: tuple[float, ...] = ()


def _stats(values: Sequence[float]) -> AggregateStats:
    arr = np.array(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return AggregateStats(mean, std, mean - std, tuple(float(v) for v in arr))


def evaluable(outcome: EvalOutcome) -> bool:
    return outcome.n_genuine > 0 and outcome.n_impostor > 0


def _trial_camera_groups(outcomes: Iterable[EvalOutcome]) -> list[list[EvalOutcome]]:
    by_trial: dict[int, list[EvalOutcome]] = {}
    for o in outcomes:
        by_trial.setdefault(o.trial_index, []).append(o)
    groups = []
    for t in sorted(by_trial):
        cams = sorted(by_trial[t], key=lambda o: o.gallery_camera)
        usable = [o for o in cams if evaluable(o)]
        for o in cams:
            if not evaluable(o):
                log.info(
                    "trial %d camera %d skipped (%d genuine, %d impostor probes)",
                    t, o.gallery_camera, o.n_genuine, o.n_impostor,
                )
        if usable:
            groups.append(usable)
        else:
            log.warning("trial %d has no evaluable camera", t)
    if not groups:
        raise NoOutcomes("no evaluable (trial, camera) outcomes")
    return groups


def aggregate_values(outcomes: Iterable[EvalOutcome], far_levels: Sequence[float], ranks: Sequence[int]) -> dict:
    """Per (far, rank): camera-mean DIR inside each trial, listed per trial."""
    groups = _trial_camera_groups(outcomes)
    max_rank = max(ranks)
    table: dict[tuple[float, int], list[float]] = {(f, k): [] for f in far_levels for k in ranks}
    for cams in groups:
        for f in far_levels:
            curves = [cmc_at_far(o, f, max_rank) for o in cams]
            for k in ranks:
                vals = [c[k - 1] for c in curves]
                table[(f, k)].append(float(np.mean(vals)))
    return table


def aggregate(outcomes: Iterable[EvalOutcome], far_levels: Sequence[float] = REPORT_FARS,
              ranks: Sequence[int] = REPORT_RANKS) -> dict[tuple[float, int], AggregateStats]:
    """Mean, sample std (n-1) and mean-minus-std across trials."""
    table = aggregate_values(list(outcomes), far_levels, ranks)
    return {cell: _stats(vals) for cell, vals in table.items()}


def mean_roc(outcomes: Sequence[EvalOutcome], rank: int, far_grid: Sequence[float] = ROC_FAR_GRID) -> list[tuple[float, float]]:
    stats = aggregate(outcomes, far_grid, [rank])
    return [(f, stats[(f, rank)].mean) for f in far_grid]


def mean_cmc(outcomes: Sequence[EvalOutcome], far_level: float, max_rank: int = CMC_MAX_RANK) -> list[tuple[int, float]]:
    ranks = list(range(1, max_rank + 1))
    stats = aggregate(outcomes, [far_level], ranks)
    return [(k, stats[(far_level, k)].mean) for k in ranks]


# -- results directory -----------------------------------------------------------


def far_label(f: float) -> str:
    return f"{f:g}"


def summary_rows(stats: dict[tuple[float, int], AggregateStats]) -> list[dict]:
    return [
        {
            "far_level": f,
            "rank": k,
            "mean": s.mean,
            "std": s.std,
            "mu_minus_sigma": s.fused,
            "trial_values": list(s.trial_values),
        }
        for (f, k), s in sorted(stats.items())
    ]


def save_outcomes(outcomes: Sequence[EvalOutcome], path: str | Path) -> None:
    Path(path).write_text(json.dumps([o.to_json() for o in outcomes]) + "\n")


def load_outcomes(path: str | Path) -> list[EvalOutcome]:
    return [EvalOutcome.from_json(d) for d in json.loads(Path(path).read_text())]


def write_curves(
    outdir: str | Path,
    outcomes: Sequence[EvalOutcome],
    far_levels: Sequence[float] = REPORT_FARS,
    ranks: Sequence[int] = REPORT_RANKS,
    cmc_max_rank: int = CMC_MAX_RANK,
) -> None:
    outdir = Path(outdir)
    for k in ranks:
        lines = ["far,dir"] + [f"{f!r},{d!r}" for f, d in mean_roc(outcomes, k)]
        (outdir / f"roc_rank{k}.csv").write_text("\n".join(lines) + "\n")
    for f in far_levels:
        lines = ["rank,dir"] + [f"{k},{d!r}" for k, d in mean_cmc(outcomes, f, cmc_max_rank)]
        (outdir / f"cmc_far{far_label(f)}.csv").write_text("\n".join(lines) + "\n")


def read_summary(results: str | Path) -> dict[str, list[dict]]:
    """Merge ``summary.json`` files found at or one level below ``results``."""
    results = Path(results)
    if not results.is_dir():
        raise MissingResults(f"{results} is not a directory")
    files = sorted([results / "summary.json"] if (results / "summary.json").is_file() else results.glob("*/summary.json"))
    if not files:
        raise MissingResults(f"no summary.json under {results}")
    merged: dict[str, list[dict]] = {}
    for f in files:
        merged.update(json.loads(f.read_text()))
    return merged
