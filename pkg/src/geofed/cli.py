"""Operator entry point: synth, partition, similarity, and run subcommands.

Exit codes: 0 success, 2 usage or config error, 3 data or file-format
error, 4 anything else. Diagnostics go to stderr; stdout carries a
one-line result summary.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datastore, federation, geometry, partition, report
from .errors import ConfigError, DataValidationError, FormatError
from .model import save_params

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def cmd_synth(args) -> str:
    payload = _load_json(args.spec)
    if args.seed is not None:
        payload["seed"] = args.seed
    spec = datastore.SyntheticSpec.from_dict(payload)
    dataset = datastore.synth_generate(spec)
    manifest = datastore.save_dataset(dataset, args.out)
    return (
        f"wrote dataset {dataset.name!r} ({len(dataset.domains)} domains, "
        f"{dataset.classes} classes, dim {dataset.dim}) to {manifest}"
    )


def cmd_partition(args) -> str:
    dataset = datastore.load_dataset(args.dataset)
    payload = _load_json(args.spec)
    if args.seed is not None:
        payload["seed"] = args.seed
    try:
        spec = partition.PartitionSpec(**payload)
    except TypeError as exc:
        raise ConfigError(f"bad partition spec: {exc}") from exc
    shards = partition.build_partition(dataset, spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    partition.save_partition(shards, spec, out)
    classes, counts = partition.shard_class_counts(shards, dataset)
    heatmap_path = out.with_suffix(".heatmap.csv")
    report.write_heatmap_csv(classes, counts, shards, heatmap_path)
    total = sum(s.size for s in shards)
    return f"wrote {len(shards)} shards ({total} samples) to {out} (+ {heatmap_path.name})"


def _domain_shapes(dataset) -> dict[str, list]:
    """Per-domain, per-class shapes from each domain's full train split."""
    shapes_by_domain: dict[str, list] = {}
    for split in dataset.domains:
        shapes = []
        for class_id in np.unique(split.train.labels):
            rows = split.train.data[split.train.labels == class_id]
            stats = geometry.compute_class_stats(
                geometry.EmbeddingMatrix(rows, int(class_id))
            )
            shapes.append(
                geometry.build_shape(
                    geometry.aggregate_global_stats([stats])
                )
            )
        shapes_by_domain[split.domain] = shapes
    return shapes_by_domain


def cmd_similarity(args) -> str:
    dataset = datastore.load_dataset(args.dataset)
    sim = geometry.cross_domain_similarity_matrix(_domain_shapes(dataset), top=args.top)
    written = report.write_similarity_csvs(sim, args.out)
    return f"wrote {len(written)} similarity matrices to {args.out}"


def cmd_run(args) -> str:
    config = federation.load_experiment_config(args.config)
    if args.seed is not None:
        payload = _load_json(args.config)
        payload["seed"] = args.seed
        config = federation.ExperimentConfig.from_dict(payload)
        if config.dataset_manifest is not None:
            resolved = (Path(args.config).parent / config.dataset_manifest).resolve()
            config = federation.ExperimentConfig(
                **{**config.__dict__, "dataset_manifest": str(resolved)}
            )
    if config.dataset_manifest is None:
        raise ConfigError("config must name a dataset manifest")
    dataset = datastore.load_dataset(config.dataset_manifest)

    result = federation.run_federation(config, dataset, workers=args.workers)
    shards = partition.build_partition(dataset, config.partition)
    classes, counts = partition.shard_class_counts(shards, dataset)

    out = Path(args.out)
    summary = report.emit_reports(
        result.records,
        out,
        config_echo=config.echo(),
        seed=config.seed,
        heatmap=(classes, counts, shards),
        sample_std=args.sample_std,
    )
    partition.save_partition(shards, config.partition, out / "partition.json")
    save_params(out / "model.mlp1", result.final_params)
    return (
        f"run complete: {config.rounds} rounds, avg_last5 {summary['avg_last5']:.4f}, "
        f"std_last5 {summary['std_last5']:.4f}, outputs in {out}"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geofed",
        description="Deterministic federated-learning simulator with "
        "geometry-guided embedding augmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    p.add_argument("--spec", required=True, help="synthetic spec JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("partition", help="build and persist client shards")
    p.add_argument("--dataset", required=True, help="dataset manifest JSON")
    p.add_argument("--spec", required=True, help="partition spec JSON file")
    p.add_argument("--out", required=True, help="output partition JSON file")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("similarity", help="cross-domain shape similarity CSVs")
    p.add_argument("--dataset", required=True, help="dataset manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--top", type=int, default=5, help="eigenvector ranks compared")
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("run", help="full federation experiment")
    p.add_argument("--config", required=True, help="experiment config JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="parallel client training")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument(
        "--sample-std",
        action="store_true",
        help="report sample (ddof=1) instead of population std across domains",
    )
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        print(args.func(args))
        return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - boundary: map anything else to exit 4
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
