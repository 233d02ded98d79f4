"""Benchmark harness: load-balance tables, step timings, sweeps, memory reports.

Runs the full pipeline on synthetic datasets at desk scale and emits CSV/JSON
reports. The CSV schema is fixed: run_id, phase, seconds, worker, count,
share, range_lo, range_hi — phase-timing rows fill the first three columns,
balance rows the rest. Every run embeds invariant checks (global order,
multiset preservation, provenance round-trips); their verdict drives the CLI
exit code.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import datagen
from .datagen import DistributionSpec
from .errors import ParameterError
from .orchestrator import (
    PHASES,
    ClusterConfig,
    SortReport,
    SortedPartition,
    distributed_sort,
)
from .partition import SampleConfig, sample_count

CSV_COLUMNS = ("run_id", "phase", "seconds", "worker", "count", "share", "range_lo", "range_hi")


@dataclass(frozen=True)
class RunSpec:
    """One benchmark run: dataset shape, cluster shape, and output options."""

    dist: DistributionSpec
    n: int = 1_000_000
    p: int = 4
    threads: int = 1
    multiplier: float = 1.0
    backend: str = "inproc"
    reps: int = 1
    out: Path | None = None
    fmt: str | None = None  # "csv", "json", or None for both

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ParameterError(f"n must be >= 0, got {self.n}")
        if self.reps < 1:
            raise ParameterError(f"reps must be >= 1, got {self.reps}")
        if self.fmt not in (None, "csv", "json"):
            raise ParameterError(f"fmt must be csv or json, got {self.fmt!r}")

    @property
    def run_id(self) -> str:
        mult = f"{self.multiplier:g}"
        return (f"{self.dist.kind.value}-n{self.n}-p{self.p}-t{self.threads}"
                f"-x{mult}-{self.backend}-s{self.dist.seed}")

    def cluster_config(self) -> ClusterConfig:
        return ClusterConfig(
            p=self.p,
            threads=self.threads,
            sample=SampleConfig(multiplier=self.multiplier),
            transport=self.backend,
            seed=self.dist.seed,
        )


@dataclass
class BalanceReport:
    """Per-worker record counts, shares of the total, and key ranges."""

    counts: list[int]
    shares: list[float]  # percent of total
    min_share: float
    max_share: float
    ratio: float  # max count / min count; inf when a worker is empty
    key_ranges: list[tuple | None]

    @classmethod
    def from_report(cls, report: SortReport) -> "BalanceReport":
        counts = list(report.counts)
        total = sum(counts)
        shares = [100.0 * c / total if total else 0.0 for c in counts]
        smallest = min(counts) if counts else 0
        ratio = (max(counts) / smallest) if smallest > 0 else math.inf
        if total == 0:
            ratio = 1.0
        return cls(counts, shares, min(shares, default=0.0), max(shares, default=0.0),
                   ratio, list(report.key_ranges))


@dataclass
class BenchmarkResult:
    run_id: str
    spec: RunSpec
    report: SortReport  # last repetition
    rep_phase_seconds: list[dict[str, float]]
    balance: BalanceReport
    baseline_seconds: float
    verified: bool
    failures: list[str] = field(default_factory=list)
    partitions: list[SortedPartition] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "n": self.spec.n,
            "p": self.spec.p,
            "threads": self.spec.threads,
            "multiplier": self.spec.multiplier,
            "backend": self.spec.backend,
            "distribution": self.spec.dist.kind.value,
            "seed": self.spec.dist.seed,
            "baseline_seconds": self.baseline_seconds,
            "rep_phase_seconds": [dict(d) for d in self.rep_phase_seconds],
            "report": self.report.to_dict(),
            "balance": {
                "counts": self.balance.counts,
                "shares": self.balance.shares,
                "min_share": self.balance.min_share,
                "max_share": self.balance.max_share,
                "ratio": None if math.isinf(self.balance.ratio) else self.balance.ratio,
                "key_ranges": [list(r) if r else None for r in self.balance.key_ranges],
            },
            "verified": self.verified,
            "failures": self.failures,
        }


def make_inputs(spec: RunSpec) -> tuple[list[np.ndarray], np.ndarray]:
    """Generate the dataset and its near-equal per-worker shards."""
    keys = datagen.generate(spec.dist, spec.n)
    return datagen.split_evenly(keys, spec.p), keys


def _verify(
    partitions: list[SortedPartition],
    inputs: list[np.ndarray],
    reference_sorted: np.ndarray,
) -> list[str]:
    """Invariant checks embedded in every benchmark run."""
    failures = []
    merged = np.concatenate([pt.keys for pt in partitions])
    if merged.size != reference_sorted.size:
        failures.append("output size differs from input size")
    elif not np.array_equal(merged, reference_sorted):
        failures.append("concatenated output differs from reference sort")
    nonempty = [pt for pt in partitions if len(pt) > 0]
    for prev, nxt in zip(nonempty, nonempty[1:]):
        if prev.keys[-1] > nxt.keys[0]:
            failures.append(
                f"key ranges of workers {prev.worker_id} and {nxt.worker_id} overlap"
            )
            break
    # Spot-check provenance round-trips on up to 512 evenly spread records.
    probes = np.unique(np.linspace(0, max(merged.size - 1, 0), num=min(512, merged.size),
                                   dtype=np.int64))
    bounds = np.cumsum([0] + [len(pt) for pt in partitions])
    for g in probes:
        w = int(np.searchsorted(bounds, g, side="right")) - 1
        i = int(g - bounds[w])
        pt = partitions[w]
        ow, oi = int(pt.origin_workers[i]), int(pt.origin_indices[i])
        if not (0 <= ow < len(inputs)) or not (0 <= oi < inputs[ow].size):
            failures.append(f"provenance ({ow}, {oi}) out of range")
            break
        if inputs[ow][oi] != pt.keys[i]:
            failures.append(f"provenance ({ow}, {oi}) does not round-trip to its key")
            break
    return failures


def run_benchmark(spec: RunSpec) -> BenchmarkResult:
    """Run the pipeline ``reps`` times and report timings, balance, and checks."""
    shards, keys = make_inputs(spec)
    config = spec.cluster_config()

    start = time.perf_counter()
    reference_sorted = np.sort(keys, kind="quicksort")
    baseline_seconds = time.perf_counter() - start

    rep_phases = []
    partitions: list[SortedPartition] = []
    report: SortReport | None = None
    for _ in range(spec.reps):
        partitions, report = distributed_sort(config, shards)
        rep_phases.append(dict(report.phase_seconds))
    assert report is not None

    failures = _verify(partitions, shards, reference_sorted)
    result = BenchmarkResult(
        run_id=spec.run_id,
        spec=spec,
        report=report,
        rep_phase_seconds=rep_phases,
        balance=BalanceReport.from_report(report),
        baseline_seconds=baseline_seconds,
        verified=not failures,
        failures=failures,
        partitions=partitions,
    )
    if spec.out is not None:
        write_result(result, spec.out, spec.fmt)
    return result


@dataclass
class SweepRow:
    multiplier: float
    ratio: float
    sample_bytes: int
    exchange_seconds: float
    total_seconds: float
    verified: bool


def sweep_multiplier(spec: RunSpec, multipliers: list[float]) -> list[SweepRow]:
    """Rerun one benchmark at several sample multipliers and compare balance."""
    if not multipliers or any(m <= 0 for m in multipliers):
        raise ParameterError("multipliers must be a non-empty list of positives")
    rows = []
    for mult in multipliers:
        result = run_benchmark(replace(spec, multiplier=mult, out=None))
        cfg = SampleConfig(multiplier=mult, key_bytes=datagen.KEY_DTYPE.itemsize)
        k = sample_count(spec.p, cfg)
        base, extra = divmod(spec.n, spec.p)
        shard_sizes = [base + (1 if w < extra else 0) for w in range(spec.p)]
        sample_bytes = sum(min(k, size) for size in shard_sizes) * datagen.KEY_DTYPE.itemsize
        rows.append(SweepRow(
            multiplier=mult,
            ratio=result.balance.ratio,
            sample_bytes=sample_bytes,
            exchange_seconds=result.report.phase_seconds["exchange"],
            total_seconds=sum(result.report.phase_seconds.values()),
            verified=result.verified,
        ))
    return rows


@dataclass
class MemoryRow:
    worker: int
    payload_bytes: int
    peak_aux_bytes: int
    aux_over_payload: float


def report_memory(spec: RunSpec) -> list[MemoryRow]:
    """Per-worker peak auxiliary bytes next to the final partition payload."""
    result = run_benchmark(replace(spec, out=None))
    rows = []
    for w in range(spec.p):
        payload = result.report.payload_bytes[w]
        aux = result.report.peak_aux_bytes[w]
        rows.append(MemoryRow(w, payload, aux, aux / payload if payload else 0.0))
    return rows


# -- report writers -----------------------------------------------------------


def _csv_rows(result: BenchmarkResult) -> list[tuple]:
    rows: list[tuple] = []
    for rep, phases in enumerate(result.rep_phase_seconds):
        for phase in PHASES:
            rows.append((f"{result.run_id}#r{rep}", phase, f"{phases[phase]:.6f}",
                         "", "", "", "", ""))
    rows.append((f"{result.run_id}#r0", "baseline_sort", f"{result.baseline_seconds:.6f}",
                 "", "", "", "", ""))
    for w, (count, share) in enumerate(zip(result.balance.counts, result.balance.shares)):
        rng = result.balance.key_ranges[w]
        lo, hi = (rng if rng is not None else ("", ""))
        rows.append((result.run_id, "", "", w, count, f"{share:.4f}", lo, hi))
    return rows


def write_result(result: BenchmarkResult, out: Path | str, fmt: str | None = None) -> list[Path]:
    """Write the report as CSV, JSON, or both (default); returns written paths."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("") if out.suffix in (".csv", ".json") else out
    written = []
    if fmt in (None, "csv"):
        path = stem.with_suffix(".csv")
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            writer.writerows(_csv_rows(result))
        written.append(path)
    if fmt in (None, "json"):
        path = stem.with_suffix(".json")
        path.write_text(json.dumps(result.to_dict(), indent=2) + "\n")
        written.append(path)
    return written


def write_sweep(rows: list[SweepRow], out: Path | str, fmt: str | None = None) -> list[Path]:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("") if out.suffix in (".csv", ".json") else out
    written = []
    if fmt in (None, "csv"):
        path = stem.with_suffix(".csv")
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("multiplier", "load_ratio", "sample_bytes",
                             "exchange_seconds", "total_seconds", "verified"))
            for r in rows:
                ratio = "" if math.isinf(r.ratio) else f"{r.ratio:.6f}"
                writer.writerow((r.multiplier, ratio, r.sample_bytes,
                                 f"{r.exchange_seconds:.6f}", f"{r.total_seconds:.6f}",
                                 r.verified))
        written.append(path)
    if fmt in (None, "json"):
        path = stem.with_suffix(".json")
        payload = [{
            "multiplier": r.multiplier,
            "load_ratio": None if math.isinf(r.ratio) else r.ratio,
            "sample_bytes": r.sample_bytes,
            "exchange_seconds": r.exchange_seconds,
            "total_seconds": r.total_seconds,
            "verified": r.verified,
        } for r in rows]
        path.write_text(json.dumps(payload, indent=2) + "\n")
        written.append(path)
    return written


def write_memory(rows: list[MemoryRow], out: Path | str, fmt: str | None = None) -> list[Path]:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("") if out.suffix in (".csv", ".json") else out
    written = []
    if fmt in (None, "csv"):
        path = stem.with_suffix(".csv")
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("worker", "payload_bytes", "peak_aux_bytes", "aux_over_payload"))
            for r in rows:
                writer.writerow((r.worker, r.payload_bytes, r.peak_aux_bytes,
                                 f"{r.aux_over_payload:.4f}"))
        written.append(path)
    if fmt in (None, "json"):
        path = stem.with_suffix(".json")
        payload = [{
            "worker": r.worker,
            "payload_bytes": r.payload_bytes,
            "peak_aux_bytes": r.peak_aux_bytes,
            "aux_over_payload": r.aux_over_payload,
        } for r in rows]
        path.write_text(json.dumps(payload, indent=2) + "\n")
        written.append(path)
    return written
