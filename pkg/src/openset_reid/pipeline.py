"""Multi-trial train / evaluate driver behind the ``run`` and ``tune`` commands."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .core import Dataset, Session
from .errors import EmptyGallery, NoTestData, NoTrainingData, ReidError
from .evaluation import (
    CMC_MAX_RANK,
    REPORT_FARS,
    REPORT_RANKS,
    EvalOutcome,
    aggregate,
    cmc_at_far,
    evaluable,
    evaluate_partition,
    save_outcomes,
    summary_rows,
    write_curves,
)
from .metrics import DEFAULT_EPSILON, DEFAULT_LAMBDA, LAMBDA_GRID, MetricKind, save_model, train
from .protocol import (
    ProtocolConfig,
    TrialPartition,
    build_gallery_probes,
    derive_seed,
    dump_partition,
    generate_training_pairs,
    make_partition,
    split_training,
    training_indices,
)
from .reduce import PcaModel, fit_pca, project

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    metric: str = MetricKind.EUCLIDEAN.value
    lam: float = DEFAULT_LAMBDA
    epsilon: float = DEFAULT_EPSILON
    pca_dim: int = 100
    n_trials: int = 10
    seed: int = 0
    workers: int = 1
    far_levels: tuple[float, ...] = REPORT_FARS
    ranks: tuple[int, ...] = REPORT_RANKS
    cmc_max_rank: int = CMC_MAX_RANK
    features: str | None = field(default=None, compare=False)

    @property
    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(n_trials=self.n_trials, master_seed=self.seed)

    def params(self) -> dict:
        return {"lam": self.lam, "epsilon": self.epsilon}

    def to_json(self) -> dict:
        data = asdict(self)
        data.pop("workers")  # results do not depend on it
        return data


@dataclass(frozen=True, eq=False)
class TrialResult:
    partition: TrialPartition
    pca: PcaModel
    model: object
    outcomes: list[EvalOutcome]
    pair_seed: int


def effective_pca_dim(requested: int, n_samples: int, dim: int) -> int:
    out = min(requested, dim, n_samples - 1)
    if out != requested:
        log.info("PCA dimension reduced from %d to %d (%d samples, %d dims)", requested, out, n_samples, dim)
    return out


def train_trial_model(train_ds: Dataset, metric: str, params: dict, pca_dim: int, pair_seed: int):
    """Fit PCA and the metric on training-session records only."""
    if np.any(train_ds.sessions != int(Session.TRAIN)):
        raise NoTrainingData("training input contains non-training records")
    pca = fit_pca(train_ds.features, effective_pca_dim(pca_dim, len(train_ds), train_ds.dim))
    reduced = train_ds.with_features(project(pca, train_ds.features))
    selection = {(r.person_id, r.camera_id) for r in reduced.records}
    pairs = generate_training_pairs(reduced, selection, pair_seed)
    return pca, train(metric, pairs, **params)


def run_trial(dataset: Dataset, trial_index: int, config: RunConfig) -> TrialResult:
    partition = make_partition(dataset, trial_index, config.protocol)
    train_ds = dataset.select(training_indices(dataset, partition.train_selection))
    pair_seed = derive_seed(config.seed, trial_index, "pairs")
    pca, model = train_trial_model(train_ds, config.metric, config.params(), config.pca_dim, pair_seed)

    test_idx = dataset.session_indices(Session.TEST)
    reduced = np.zeros((len(dataset), pca.d_out))
    reduced[test_idx] = project(pca, dataset.features[test_idx])
    test_view = dataset.with_features(reduced)
    outcomes = [evaluate_partition(model, partition, cam, test_view) for cam in sorted(partition.cameras)]
    return TrialResult(partition, pca, model, outcomes, pair_seed)


def run_trials(dataset: Dataset, config: RunConfig) -> list[TrialResult]:
    if dataset.features is None:
        raise ReidError("dataset carries no features")
    if len(dataset.session_indices(Session.TEST)) == 0:
        raise NoTestData("feature cache has no test-session records")
    trials = range(config.n_trials)
    # Single-threaded BLAS keeps floating-point reductions identical for any worker count.
    with threadpool_limits(limits=1, user_api="blas"):
        if config.workers <= 1:
            return [run_trial(dataset, t, config) for t in trials]
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(lambda t: run_trial(dataset, t, config), trials))


def write_run(outdir: Path, dataset: Dataset, config: RunConfig, results: Sequence[TrialResult]) -> dict:
    outcomes = [o for r in results for o in r.outcomes]
    save_outcomes(outcomes, outdir / "outcomes.json")
    stats = aggregate(outcomes, config.far_levels, config.ranks)
    summary = {config.metric: summary_rows(stats)}
    (outdir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    write_curves(outdir, outcomes, config.far_levels, config.ranks, config.cmc_max_rank)
    return summary


def run_experiment(dataset: Dataset, config: RunConfig, outdir: str | Path) -> dict:
    """Run all trials and write the results directory.

    Layout: ``config.json``, ``partitions/trial{t}.json``, ``models/trial{t}.bin``,
    ``outcomes.json``, ``summary.json``, ``roc_rank{k}.csv``, ``cmc_far{f}.csv``.
    A ``FAILED`` marker is written if anything raises.
    """
    outdir = Path(outdir)
    (outdir / "partitions").mkdir(parents=True, exist_ok=True)
    (outdir / "models").mkdir(exist_ok=True)
    (outdir / "FAILED").unlink(missing_ok=True)
    (outdir / "config.json").write_text(json.dumps(config.to_json(), indent=1, sort_keys=True) + "\n")
    results: list[TrialResult] = []
    try:
        results = run_trials(dataset, config)
        for r in results:
            t = r.partition.trial_index
            dump_partition(r.partition, dataset, outdir / "partitions" / f"trial{t}.json", r.pair_seed)
            save_model(outdir / "models" / f"trial{t}.bin", r.pca, r.model, config.seed,
                       r.partition.selection_digest(), t)
        return write_run(outdir, dataset, config, results)
    except Exception as exc:
        (outdir / "FAILED").write_text(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        raise


# -- hyper-parameter selection on the training session ---------------------------


def validation_score(model, pca: PcaModel, val_ds: Dataset, far_level: float = 0.1, rank: int = 1) -> float | None:
    """Camera-mean DIR of held-out training records, each camera as gallery in turn."""
    reduced = val_ds.with_features(project(pca, val_ds.features))
    persons = set(reduced.persons.tolist())
    partition = TrialPartition(-1, frozenset(), frozenset(persons))
    values = []
    for cam in sorted(set(reduced.cameras.tolist())):
        try:
            partition.cameras[cam] = build_gallery_probes(reduced, persons, cam, session=Session.TRAIN)
        except EmptyGallery:
            continue
        outcome = evaluate_partition(model, partition, cam, reduced)
        if evaluable(outcome):
            values.append(cmc_at_far(outcome, far_level, rank)[rank - 1])
    return float(np.mean(values)) if values else None


def tune_lambda(
    dataset: Dataset,
    config: RunConfig,
    grid: Sequence[float] = LAMBDA_GRID,
    metric: str = MetricKind.RRDA.value,
) -> dict:
    """Pick lambda by training on each trial's selected half of the training
    session and validating on the remaining half. Test-session data is never
    touched."""
    train_only = dataset.select(dataset.session_indices(Session.TRAIN))
    if len(train_only) == 0:
        raise NoTrainingData("dataset has no training-session records")
    per_lambda: dict[float, list[float]] = {lam: [] for lam in grid}
    for t in range(config.n_trials):
        selection = split_training(train_only, t, config.protocol)
        fit_idx = training_indices(train_only, selection)
        val_idx = np.setdiff1d(np.arange(len(train_only)), fit_idx)
        fit_ds, val_ds = train_only.select(fit_idx), train_only.select(val_idx)
        pair_seed = derive_seed(config.seed, t, "pairs")
        for lam in grid:
            params = {"lam": lam, "epsilon": config.epsilon}
            pca, model = train_trial_model(fit_ds, metric, params, config.pca_dim, pair_seed)
            value = validation_score(model, pca, val_ds)
            if value is not None:
                per_lambda[lam].append(value)
    means = {lam: float(np.mean(v)) for lam, v in per_lambda.items() if v}
    if not means:
        raise NoTrainingData("no trial produced a usable validation split")
    best = max(means, key=lambda lam: (means[lam], -lam))
    return {"metric": metric, "best_lambda": best, "validation_dir": {repr(k): v for k, v in means.items()}}
