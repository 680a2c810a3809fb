"""Metrics and artifact emission: CSV series, run summaries, heatmaps.

The headline metric is the mean accuracy over the last five rounds,
averaged across domains, with the population standard deviation across
domains as the fairness measure. CSVs use a header row, '.' decimals and
LF line endings; floats in metrics.csv are written with full round-trip
precision so recomputation from disk matches the summary exactly.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataValidationError
from .federation import RoundRecord
from .geometry import SimilarityReport

logger = logging.getLogger(__name__)

SUMMARY_SCHEMA = 1
LAST_ROUNDS = 5


def last5_average(series: Sequence[float]) -> float:
    """Mean of the final five entries; shorter series average everything
    (logged as a warning)."""
    if not series:
        raise DataValidationError("empty series")
    if len(series) < LAST_ROUNDS:
        logger.warning(
            "series has %d < %d rounds; averaging all of them", len(series), LAST_ROUNDS
        )
    window = series[-LAST_ROUNDS:]
    return float(np.mean(window))


def cross_domain_std(values: Sequence[float], sample: bool = False) -> float:
    """Standard deviation of per-domain accuracies (population by default)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise DataValidationError("no domain accuracies")
    if sample and arr.size < 2:
        raise DataValidationError("sample std needs at least two domains")
    # Shift by the minimum so identical inputs give exactly 0.
    return float((arr - arr.min()).std(ddof=1 if sample else 0))


def domain_series(records: Sequence[RoundRecord], domain: str) -> list[float]:
    return [r.per_domain_accuracy[domain] for r in records]


def summarize(
    records: Sequence[RoundRecord],
    config_echo: dict,
    seed: int,
    sample_std: bool = False,
) -> dict:
    """Final metrics: per-domain last-5 averages, their mean and spread."""
    if not records:
        raise DataValidationError("no round records")
    domains = sorted(records[0].per_domain_accuracy)
    per_domain = {d: last5_average(domain_series(records, d)) for d in domains}
    values = [per_domain[d] for d in domains]
    return {
        "schema": SUMMARY_SCHEMA,
        "seed": seed,
        "rounds": len(records),
        "last5_window": min(LAST_ROUNDS, len(records)),
        "domains": domains,
        "per_domain_last5": per_domain,
        "avg_last5": float(np.mean(values)),
        "std_last5": cross_domain_std(values, sample=sample_std),
        "std_mode": "sample" if sample_std else "population",
        "config": config_echo,
    }


def _ensure_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise DataValidationError(f"output directory not writable: {exc}") from exc
    return out


def write_metrics_csv(records: Sequence[RoundRecord], path) -> None:
    """One row per (round, domain), full float precision."""
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "domain", "accuracy", "loss"])
        for record in records:
            for domain in sorted(record.per_domain_accuracy):
                writer.writerow(
                    [
                        record.round_index,
                        domain,
                        repr(float(record.per_domain_accuracy[domain])),
                        repr(float(record.per_domain_loss[domain])),
                    ]
                )


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {
                "round": int(row["round"]),
                "domain": row["domain"],
                "accuracy": float(row["accuracy"]),
                "loss": float(row["loss"]),
            }
            for row in csv.DictReader(fh)
        ]


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def write_heatmap_csv(classes: Sequence[int], counts: np.ndarray, shards, path) -> None:
    """Client-by-class count matrix companion to a partition file."""
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["client_id", "domain"] + [f"class_{c}" for c in classes])
        for shard, row in zip(shards, counts):
            writer.writerow([shard.client_id, shard.domain] + [int(v) for v in row])


def write_similarity_csvs(report: SimilarityReport, out_dir, digits: int = 6) -> list[Path]:
    """One CSV per domain pair; entries at 6 significant digits."""
    out = _ensure_dir(out_dir)
    written = []
    for (dom_a, dom_b), matrix in sorted(report.matrices.items()):
        path = out / f"similarity_{dom_a}_vs_{dom_b}.csv"
        with open(path, "w", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"{dom_a}\\{dom_b}"] + [f"class_{c}" for c in report.classes])
            for i, class_id in enumerate(report.classes):
                writer.writerow(
                    [f"class_{class_id}"]
                    + [f"{v:.{digits}g}" if np.isfinite(v) else "nan" for v in matrix[i]]
                )
        written.append(path)
    for domain, class_id in report.missing:
        logger.warning("domain %s is missing class %d; rows left NaN", domain, class_id)
    return written


def emit_reports(
    records: Sequence[RoundRecord],
    out_dir,
    config_echo: dict,
    seed: int,
    heatmap: tuple[Sequence[int], np.ndarray, Sequence] | None = None,
    similarity: SimilarityReport | None = None,
    sample_std: bool = False,
) -> dict:
    """Write metrics.csv and summary.json (plus optional companions); idempotent."""
    out = _ensure_dir(out_dir)
    write_metrics_csv(records, out / "metrics.csv")
    summary = summarize(records, config_echo, seed, sample_std=sample_std)
    write_summary(summary, out / "summary.json")
    if heatmap is not None:
        classes, counts, shards = heatmap
        write_heatmap_csv(classes, counts, shards, out / "partition_heatmap.csv")
    if similarity is not None:
        write_similarity_csvs(similarity, out)
    return summary
