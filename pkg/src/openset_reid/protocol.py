"""Trial partitioning: training selection, test selection with cross-camera
closure, and per-camera gallery / genuine-probe / impostor-probe sets."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Dataset, Session
from .errors import EmptyGallery, NoPositivePairs, NoTestData, NoTrainingData
from .metrics import PairSet

log = logging.getLogger(__name__)

NEGATIVE_RATIO = 5


@dataclass(frozen=True)
class ProtocolConfig:
    n_trials: int = 10
    master_seed: int = 0
    train_fraction: float = 0.5
    test_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        for f in (self.train_fraction, self.test_fraction):
            if not 0.0 < f <= 1.0:
                raise ValueError("fractions must lie in (0, 1]")


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from an arbitrary tuple of parts."""
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def _quota(n: int, fraction: float) -> int:
    return math.ceil(n * fraction)


def _shuffled(items: list[int], seed: int) -> list[int]:
    rng = np.random.default_rng(seed)
    return [items[i] for i in rng.permutation(len(items))]


def split_training(dataset: Dataset, trial_index: int, config: ProtocolConfig) -> frozenset[tuple[int, int]]:
    """Per camera, choose ceil(n_c * train_fraction) of its training-session persons."""
    train = dataset.session_indices(Session.TRAIN)
    if len(train) == 0:
        raise NoTrainingData("dataset has no training-session records")
    selected: set[tuple[int, int]] = set()
    cams = dataset.cameras[train]
    persons = dataset.persons[train]
    for cam in sorted(set(cams.tolist())):
        pool = sorted(set(persons[cams == cam].tolist()))
        seed = derive_seed(config.master_seed, trial_index, "train", cam)
        chosen = _shuffled(pool, seed)[: _quota(len(pool), config.train_fraction)]
        selected.update((p, cam) for p in chosen)
    return frozenset(selected)


def split_test(dataset: Dataset, trial_index: int, config: ProtocolConfig) -> frozenset[int]:
    """Sequential per-camera quota filling; each drawn person is selected everywhere."""
    test = dataset.session_indices(Session.TEST)
    if len(test) == 0:
        raise NoTestData("dataset has no test-session records")
    cams = dataset.cameras[test]
    persons = dataset.persons[test]
    selected: set[int] = set()
    for cam in sorted(set(cams.tolist())):
        pool = sorted(set(persons[cams == cam].tolist()))
        quota = _quota(len(pool), config.test_fraction)
        have = sum(p in selected for p in pool)
        if have >= quota:
            continue
        seed = derive_seed(config.master_seed, trial_index, "test", cam)
        remaining = _shuffled([p for p in pool if p not in selected], seed)
        selected.update(remaining[: quota - have])
    return frozenset(selected)


def build_gallery_probes(
    dataset: Dataset,
    test_persons: frozenset[int] | set[int],
    gallery_camera: int,
    session: Session = Session.TEST,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Record indices of (G_c, P_G_c, P_N_c), each in dataset order.

    ``session`` is TEST for evaluation; validation on held-out training data
    passes TRAIN.
    """
    in_test = (dataset.sessions == int(session)) & np.isin(dataset.persons, list(test_persons))
    at_cam = dataset.cameras == gallery_camera
    gallery = np.flatnonzero(in_test & at_cam)
    if len(gallery) == 0:
        raise EmptyGallery(f"camera {gallery_camera} has no selected test records")
    enrolled = np.isin(dataset.persons, np.unique(dataset.persons[gallery]))
    genuine = np.flatnonzero(in_test & ~at_cam & enrolled)
    impostor = np.flatnonzero(in_test & ~at_cam & ~enrolled)
    return gallery, genuine, impostor


def training_indices(dataset: Dataset, selection: frozenset[tuple[int, int]] | set[tuple[int, int]]) -> np.ndarray:
    keys = set(selection)
    train = dataset.session_indices(Session.TRAIN)
    return np.array(
        [i for i in train if (int(dataset.persons[i]), int(dataset.cameras[i])) in keys],
        dtype=np.int64,
    )


def _sample_negatives(labels: np.ndarray, target: int, available: int, rng: np.random.Generator) -> np.ndarray:
    n = len(labels)
    if target <= 0 or available == 0:
        return np.empty((0, 2), dtype=np.int64)
    if target >= available:
        i, j = np.triu_indices(n, k=1)
        keep = labels[i] != labels[j]
        return np.column_stack([i[keep], j[keep]])
    chosen: dict[tuple[int, int], None] = {}
    while len(chosen) < target:
        a = rng.integers(0, n, size=2 * (target - len(chosen)) + 16)
        b = rng.integers(0, n, size=len(a))
        for x, y in zip(a.tolist(), b.tolist()):
            if labels[x] == labels[y]:
                continue
            key = (x, y) if x < y else (y, x)
            if key not in chosen:
                chosen[key] = None
                if len(chosen) == target:
                    break
    return np.array(list(chosen), dtype=np.int64)


def generate_training_pairs(
    dataset: Dataset,
    train_selection: frozenset[tuple[int, int]] | set[tuple[int, int]],
    seed: int,
    negative_ratio: int = NEGATIVE_RATIO,
) -> PairSet:
    """All same-person pairs plus a seeded sample of different-person pairs.

    Pair indices refer to rows of the returned ``PairSet`` (the selected
    training records, in dataset order).
    """
    idx = training_indices(dataset, train_selection)
    labels = dataset.persons[idx]
    i, j = np.triu_indices(len(idx), k=1)
    same = labels[i] == labels[j]
    positives = np.column_stack([i[same], j[same]])
    if len(positives) == 0:
        raise NoPositivePairs("selected training records contain no same-person pairs")
    available = int((~same).sum())
    rng = np.random.default_rng(seed)
    negatives = _sample_negatives(labels, negative_ratio * len(positives), available, rng)
    feats = None if dataset.features is None else dataset.features[idx]
    return PairSet(feats, labels, positives, negatives, records=tuple(dataset.records[k] for k in idx))


@dataclass(frozen=True, eq=False)
class TrialPartition:
    trial_index: int
    train_selection: frozenset[tuple[int, int]]
    test_persons: frozenset[int]
    # camera -> (gallery, genuine probes, impostor probes) as record indices
    cameras: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)

    def selection_digest(self) -> str:
        payload = json.dumps(sorted(self.train_selection))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def make_partition(dataset: Dataset, trial_index: int, config: ProtocolConfig) -> TrialPartition:
    selection = split_training(dataset, trial_index, config)
    persons = split_test(dataset, trial_index, config)
    test = dataset.session_indices(Session.TEST)
    cameras = {}
    for cam in sorted(set(dataset.cameras[test].tolist())):
        try:
            cameras[cam] = build_gallery_probes(dataset, persons, cam)
        except EmptyGallery:
            log.info("trial %d: camera %d has no selected test persons", trial_index, cam)
    n_test_persons = len(set(dataset.persons[test].tolist()))
    log.info(
        "trial %d: %d training (person, camera) selections, %d/%d test persons (%.3f)",
        trial_index,
        len(selection),
        len(persons),
        n_test_persons,
        len(persons) / max(n_test_persons, 1),
    )
    return TrialPartition(trial_index, selection, persons, cameras)


def partition_to_json(partition: TrialPartition, dataset: Dataset, train_seed: int | None = None) -> dict:
    def keys(indices: np.ndarray) -> list:
        return [dataset.records[i].key_json() for i in indices]

    train_idx = training_indices(dataset, partition.train_selection)
    return {
        "trial_index": partition.trial_index,
        "pair_seed": train_seed,
        "selection_digest": partition.selection_digest(),
        "train_selection": [list(k) for k in sorted(partition.train_selection)],
        "train_records": keys(train_idx),
        "test_persons": sorted(partition.test_persons),
        "cameras": {
            str(cam): {"gallery": keys(g), "genuine_probes": keys(pg), "impostor_probes": keys(pn)}
            for cam, (g, pg, pn) in sorted(partition.cameras.items())
        },
    }


def dump_partition(partition: TrialPartition, dataset: Dataset, path: str | Path, train_seed: int | None = None) -> None:
    Path(path).write_text(json.dumps(partition_to_json(partition, dataset, train_seed), indent=1) + "\n")
