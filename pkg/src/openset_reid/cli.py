"""Command-line front-end.

Subcommands: extract, run, report, synth, audit, tune, manifest. On failure a
single JSON line ``{"error": <code>, "message": ...}`` is written to stderr and
the exit status is non-zero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import synth
from .core import (
    Dataset,
    Session,
    load_manifest,
    manifest_from_directory,
    read_feature_cache,
    save_manifest,
    write_feature_cache,
)
from .errors import DecodeFailure, EmptyDataset, MissingResults, ReidError
from .evaluation import aggregate, load_outcomes, read_summary, summary_rows
from .features import DEFAULT_CONFIG, PixelImage, describe, load_image, save_image
from .metrics import TRAINERS
from .pipeline import RunConfig, run_experiment, tune_lambda

log = logging.getLogger("openset_reid")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


# -- extract ---------------------------------------------------------------------


def _extract_one(source) -> np.ndarray:
    image = source if isinstance(source, PixelImage) else load_image(source)
    return describe(image, DEFAULT_CONFIG)


def _safe_extract(source):
    try:
        return _extract_one(source), None
    except Exception as exc:  # reported per record below
        return None, f"{type(exc).__name__}: {exc}"


def extract_dataset(dataset: Dataset, base_dir: Path | None = None, workers: int = 1) -> Dataset:
    """Attach a descriptor to every record; rows are in record order for any worker count."""
    if len(dataset) == 0:
        raise EmptyDataset("manifest lists no images")
    sources = []
    for r in dataset.records:
        src = r.source
        if isinstance(src, (str, Path)) and base_dir is not None and not Path(src).is_absolute():
            src = str(base_dir / src)
        sources.append(src)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
            results = list(pool.map(_safe_extract, sources, chunksize=8))
    else:
        results = [_safe_extract(s) for s in sources]
    failures = [(r.key_json(), err) for r, (_, err) in zip(dataset.records, results) if err]
    if failures:
        raise DecodeFailure(failures)
    return dataset.with_features(np.stack([d for d, _ in results]))


def cmd_extract(args: argparse.Namespace) -> int:
    manifest = Path(args.manifest)
    dataset = load_manifest(manifest)
    root = Path(args.image_root) if args.image_root else manifest.parent
    out = extract_dataset(dataset, root, args.workers)
    write_feature_cache(out, args.out)
    print(json.dumps({"records": len(out), "dims": out.dim, "out": str(args.out)}))
    return 0


# -- run / tune ------------------------------------------------------------------


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(
        metric=args.metric,
        pca_dim=args.pca_dim,
        n_trials=args.trials,
        seed=args.seed,
        workers=args.workers,
        features=str(args.features),
    )
    if getattr(args, "lam", None) is not None:
        cfg = replace(cfg, lam=args.lam)
    if args.epsilon is not None:
        cfg = replace(cfg, epsilon=args.epsilon)
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    dataset = read_feature_cache(args.features)
    cfg = _run_config(args)
    summary = run_experiment(dataset, cfg, args.out)
    print(json.dumps(summary))
    return 0


def cmd_tune(args: argparse.Namespace) -> int:
    dataset = read_feature_cache(args.features)
    result = tune_lambda(dataset, _run_config(args), metric=args.metric)
    print(json.dumps(result, sort_keys=True))
    return 0


# -- report ------------------------------------------------------------------------


def collect_stats(results: Path, far_levels, ranks) -> dict[str, list[dict]]:
    """Recompute from saved outcomes when present, else read stored summaries."""
    if not results.is_dir():
        raise MissingResults(f"{results} is not a directory")
    runs = [results] if (results / "summary.json").is_file() or (results / "outcomes.json").is_file() else sorted(
        p for p in results.iterdir() if p.is_dir()
    )
    table: dict[str, list[dict]] = {}
    for run in runs:
        outcomes_file = run / "outcomes.json"
        if not outcomes_file.is_file():
            continue
        name = run.name
        summary_file = run / "summary.json"
        if summary_file.is_file():
            name = next(iter(json.loads(summary_file.read_text())), name)
        table[name] = summary_rows(aggregate(load_outcomes(outcomes_file), far_levels, ranks))
    if not table:
        stored = read_summary(results)
        for name, rows in stored.items():
            table[name] = [r for r in rows if r["far_level"] in far_levels and r["rank"] in ranks]
    if not table:
        raise MissingResults(f"no results under {results}")
    return table


def format_report(table: dict[str, list[dict]], far_levels, ranks) -> str:
    cells = [(f, k) for f in far_levels for k in ranks]
    head = ["metric"] + [f"FAR={100 * f:g}% rank={k}" for f, k in cells]
    lines = ["\t".join(head)]
    for name in sorted(table):
        rows = {(r["far_level"], r["rank"]): r for r in table[name]}
        parts = [name]
        for cell in cells:
            r = rows.get(cell)
            if r is None:
                parts.append("n/a")
            else:
                parts.append(f"{100 * r['mean']:.2f} / {100 * r['std']:.2f} / {100 * r['mu_minus_sigma']:.2f}")
        lines.append("\t".join(parts))
    lines.append("(cells: mean / std / mean-std, in %)")
    return "\n".join(lines)


def cmd_report(args: argparse.Namespace) -> int:
    results = Path(args.results)
    table = collect_stats(results, args.far, args.ranks)
    print(format_report(table, args.far, args.ranks))
    with (results / "report.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "far_level", "rank", "mean", "std", "mu_minus_sigma"])
        for name in sorted(table):
            for r in table[name]:
                writer.writerow([name, r["far_level"], r["rank"], repr(r["mean"]), repr(r["std"]), repr(r["mu_minus_sigma"])])
    return 0


# -- synth ---------------------------------------------------------------------------


def _synth_config(args: argparse.Namespace) -> synth.SynthConfig:
    return synth.SynthConfig(
        n_identities=args.identities,
        n_cameras=args.cameras,
        images_per_identity_per_camera=args.images,
        latent_dim=args.latent_dim,
        distortion=args.distortion,
        offset_magnitude=args.offset,
        noise_sigma=args.noise,
        nuisance_dims=args.nuisance_dims,
        nuisance_sigma=args.nuisance_sigma,
        presence_probability=args.presence,
        seed=args.seed,
    )


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _synth_config(args)
    if args.kind == "features":
        ds = synth.generate_features(cfg)
        save_manifest(ds, out / "manifest.csv")
        write_feature_cache(ds, out / "features.bin")
    else:
        ds = synth.generate_images(cfg)
        (out / "img").mkdir(exist_ok=True)
        records = []
        for r in ds.records:
            rel = f"img/{r.person_id:04d}-{r.camera_id:02d}-{1 if r.session is Session.TEST else 2:02d}-{r.frame:05d}.png"
            save_image(r.source, out / rel)
            records.append(replace(r, source=rel))
        save_manifest(Dataset(tuple(records)), out / "manifest.csv")
    print(json.dumps({"records": len(ds), "out": str(out)}))
    return 0


# -- audit / manifest ---------------------------------------------------------------


def audit_partition(data: dict) -> list[str]:
    """Invariant violations in one partition dump (empty list when clean)."""
    problems = []
    test_persons = set(data["test_persons"])
    for cam, sets in data["cameras"].items():
        g = {tuple(k) for k in sets["gallery"]}
        pg = {tuple(k) for k in sets["genuine_probes"]}
        pn = {tuple(k) for k in sets["impostor_probes"]}
        g_persons = {k[0] for k in g}
        if g & pg or g & pn or pg & pn:
            problems.append(f"camera {cam}: sets overlap")
        if any(k[1] != int(cam) for k in g):
            problems.append(f"camera {cam}: gallery holds another camera")
        if any(k[1] == int(cam) for k in pg | pn):
            problems.append(f"camera {cam}: probe from the gallery camera")
        if not {k[0] for k in pg} <= g_persons:
            problems.append(f"camera {cam}: genuine probe outside the gallery")
        if {k[0] for k in pn} & g_persons:
            problems.append(f"camera {cam}: impostor probe enrolled in the gallery")
        if any(k[0] not in test_persons or k[2] != "test" for k in g | pg | pn):
            problems.append(f"camera {cam}: record outside the selected test persons")
    if any(k[2] != "train" for k in data["train_records"]):
        problems.append("training selection holds test-session records")
    return problems


def cmd_audit(args: argparse.Namespace) -> int:
    results = Path(args.results)
    files = sorted((results / "partitions").glob("trial*.json"), key=lambda p: int(p.stem[5:]))
    if not files:
        raise MissingResults(f"no partition dumps under {results / 'partitions'}")
    status = 0
    for f in files:
        data = json.loads(f.read_text())
        for cam, sets in sorted(data["cameras"].items(), key=lambda kv: int(kv[0])):
            print(
                f"trial {data['trial_index']} camera {cam}: gallery={len(sets['gallery'])} "
                f"genuine={len(sets['genuine_probes'])} impostor={len(sets['impostor_probes'])}"
            )
        problems = audit_partition(data)
        for p in problems:
            print(f"trial {data['trial_index']}: VIOLATION {p}")
        status |= bool(problems)
    return int(status)


def cmd_manifest(args: argparse.Namespace) -> int:
    ds = manifest_from_directory(args.images)
    save_manifest(ds, args.out)
    print(json.dumps({"records": len(ds), "out": str(args.out)}))
    return 0


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="openset-reid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="compute descriptors for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--image-root", default=None, help="base for relative paths (default: manifest dir)")
    p.set_defaults(func=cmd_extract)

    for name, func, helptext in (
        ("run", cmd_run, "train and evaluate over all trials"),
        ("tune", cmd_tune, "select lambda on the training session"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--features", required=True)
        p.add_argument("--metric", choices=sorted(TRAINERS), default="rrda" if name == "tune" else None,
                       required=name == "run")
        if name == "run":
            p.add_argument("--lambda", dest="lam", type=float, default=None)
            p.add_argument("--out", required=True)
        p.add_argument("--epsilon", type=float, default=None)
        p.add_argument("--pca-dim", type=int, default=100)
        p.add_argument("--trials", type=int, default=10)
        p.add_argument("--seed", type=int, required=name == "run", default=0)
        p.add_argument("--workers", type=int, default=1)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="print the operating-point table")
    p.add_argument("--results", required=True)
    p.add_argument("--far", type=_floats, default=(0.01, 0.10, 1.0))
    p.add_argument("--ranks", type=_ints, default=(1, 10))
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("kind", choices=("features", "images"))
    p.add_argument("--out", required=True)
    d = synth.SynthConfig()
    p.add_argument("--identities", type=int, default=d.n_identities)
    p.add_argument("--cameras", type=int, default=d.n_cameras)
    p.add_argument("--images", type=int, default=d.images_per_identity_per_camera)
    p.add_argument("--latent-dim", type=int, default=d.latent_dim)
    p.add_argument("--distortion", type=float, default=d.distortion)
    p.add_argument("--offset", type=float, default=d.offset_magnitude)
    p.add_argument("--noise", type=float, default=d.noise_sigma)
    p.add_argument("--nuisance-dims", type=int, default=d.nuisance_dims)
    p.add_argument("--nuisance-sigma", type=float, default=d.nuisance_sigma)
    p.add_argument("--presence", type=float, default=d.presence_probability)
    p.add_argument("--seed", type=int, default=d.seed)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("audit", help="print and check partition dumps")
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("manifest", help="build a manifest from PPPP-CC-SS-FFFFF image names")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_manifest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ReidError as exc:
        print(json.dumps(exc.payload()), file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
