"""Command-line harness: gen, sort, sweep, mem, serve.

Subcommands parse flags into the same request shapes the HTTP service uses
and dispatch either in-process (default) or to a running service when
``--server URL`` is given; all sorting, sweeping, and reporting logic lives in
the core package. ``sort --backend tcp`` with ``--listen``/``--peers`` runs a
single worker of a multi-process cluster instead.

Exit codes: 0 when the run passed its embedded invariant checks, 2 when a
check failed, 1 on errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bench, datagen
from .bench import CSV_COLUMNS, RunSpec
from .datagen import DistKind, DistributionSpec
from .errors import ParameterError, SampleSortError
from .orchestrator import PHASES, ClusterConfig, run_worker_process
from .partition import SampleConfig
from .transport import Endpoint

_DIST_DEFAULTS = DistributionSpec(kind=DistKind.UNIFORM)


def _add_dist_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("distribution")
    group.add_argument("--dist", choices=[k.value for k in DistKind], default="uniform",
                       help="input key distribution (default: uniform)")
    group.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")
    group.add_argument("--low", type=int, default=_DIST_DEFAULTS.low,
                       help="uniform: inclusive lower bound")
    group.add_argument("--high", type=int, default=_DIST_DEFAULTS.high,
                       help="uniform: exclusive upper bound")
    group.add_argument("--mean", type=float, default=_DIST_DEFAULTS.mean,
                       help="normal: mean")
    group.add_argument("--stddev", type=float, default=_DIST_DEFAULTS.stddev,
                       help="normal: standard deviation")
    group.add_argument("--median", type=float, default=_DIST_DEFAULTS.median,
                       help="right_skewed: median of the log-normal")
    group.add_argument("--sigma", type=float, default=_DIST_DEFAULTS.sigma,
                       help="right_skewed: log-space sigma")
    group.add_argument("--scale", type=float, default=_DIST_DEFAULTS.scale,
                       help="exponential: mean (1/rate)")
    group.add_argument("--fraction", type=float, default=_DIST_DEFAULTS.fraction,
                       help="duplicated: share of keys drawn from the small pool")
    group.add_argument("--distinct", type=int, default=_DIST_DEFAULTS.distinct,
                       help="duplicated: size of the small key pool")


def _dist_from_args(args: argparse.Namespace) -> DistributionSpec:
    return DistributionSpec(
        kind=DistKind(args.dist), seed=args.seed, low=args.low, high=args.high,
        mean=args.mean, stddev=args.stddev, median=args.median, sigma=args.sigma,
        scale=args.scale, fraction=args.fraction, distinct=args.distinct,
    )


def _dist_payload(args: argparse.Namespace) -> dict:
    return {
        "kind": args.dist, "seed": args.seed, "low": args.low, "high": args.high,
        "mean": args.mean, "stddev": args.stddev, "median": args.median,
        "sigma": args.sigma, "scale": args.scale, "fraction": args.fraction,
        "distinct": args.distinct,
    }


def _add_run_args(parser: argparse.ArgumentParser) -> None:
    _add_dist_args(parser)
    parser.add_argument("--n", type=int, default=1_000_000, help="total keys (default: 1e6)")
    parser.add_argument("--p", type=int, default=4, help="worker count (default: 4)")
    parser.add_argument("--threads", type=int, default=1, help="threads per worker (default: 1)")
    parser.add_argument("--multiplier", type=float, default=1.0,
                        help="sample-size multiplier over the buffer rule (default: 1.0)")
    parser.add_argument("--backend", choices=["inproc", "tcp"], default="inproc",
                        help="transport backend (default: inproc)")
    parser.add_argument("--reps", type=int, default=1, help="repetitions (default: 1)")
    parser.add_argument("--out", type=Path, default=None, help="report path stem")
    parser.add_argument("--format", choices=["csv", "json"], default=None, dest="fmt",
                        help="report format (default: both)")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service; requests go over HTTP")


def _run_spec(args: argparse.Namespace) -> RunSpec:
    return RunSpec(
        dist=_dist_from_args(args), n=args.n, p=args.p, threads=args.threads,
        multiplier=args.multiplier, backend=args.backend, reps=args.reps,
        out=args.out, fmt=args.fmt,
    )


def _run_payload(args: argparse.Namespace) -> dict:
    return {
        "dist": _dist_payload(args), "n": args.n, "p": args.p, "threads": args.threads,
        "multiplier": args.multiplier, "backend": args.backend, "reps": args.reps,
    }


def _post(server: str, path: str, payload: dict):
    import httpx

    response = httpx.post(server.rstrip("/") + path, json=payload, timeout=600.0)
    if response.status_code >= 400:
        raise SampleSortError(f"server returned {response.status_code}: {response.text}")
    return response


def _print_phases(phase_seconds: dict) -> None:
    for phase in PHASES:
        print(f"  {phase:<18} {phase_seconds[phase]:.4f}s")


def _print_balance(counts: list, shares: list, ratio) -> None:
    for w, (count, share) in enumerate(zip(counts, shares)):
        print(f"  worker {w:<3} count={count:<10} share={share:.3f}%")
    ratio_str = "inf (an empty worker)" if ratio is None or math.isinf(ratio) else f"{ratio:.4f}"
    print(f"  max/min load ratio: {ratio_str}")


# -- gen -----------------------------------------------------------------------


def _cmd_gen(args: argparse.Namespace) -> int:
    if args.server:
        response = _post(args.server, "/generate",
                         {"dist": _dist_payload(args), "n": args.n})
        keys = np.frombuffer(response.content, dtype=datagen.KEY_DTYPE)
    else:
        keys = datagen.generate(_dist_from_args(args), args.n)
    datagen.write_keys(args.out, keys, text=args.text)
    print(f"wrote {keys.size} keys to {args.out}" + (" (text)" if args.text else ""))
    return 0


# -- sort ------------------------------------------------------------------------


def _sort_response_csv(resp: dict, out: Path, fmt: str | None) -> None:
    """Client-side rendering of a server sort response, same CSV schema."""
    stem = out.with_suffix("") if out.suffix in (".csv", ".json") else out
    if fmt in (None, "json"):
        stem.with_suffix(".json").write_text(json.dumps(resp, indent=2) + "\n")
    if fmt in (None, "csv"):
        with stem.with_suffix(".csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for phase in PHASES:
                writer.writerow((f"{resp['run_id']}#r0", phase,
                                 f"{resp['phase_seconds'][phase]:.6f}", "", "", "", "", ""))
            writer.writerow((f"{resp['run_id']}#r0", "baseline_sort",
                             f"{resp['baseline_seconds']:.6f}", "", "", "", "", ""))
            balance = resp["balance"]
            for w, (count, share) in enumerate(zip(balance["counts"], balance["shares"])):
                rng = balance["key_ranges"][w]
                lo, hi = (rng if rng else ("", ""))
                writer.writerow((resp["run_id"], "", "", w, count, f"{share:.4f}", lo, hi))


def _cmd_sort(args: argparse.Namespace) -> int:
    if args.listen or args.peers:
        return _cmd_sort_tcp_worker(args)
    if args.server:
        resp = _post(args.server, "/sort", _run_payload(args)).json()
        print(f"run {resp['run_id']} (server)")
        _print_phases(resp["phase_seconds"])
        balance = resp["balance"]
        _print_balance(balance["counts"], balance["shares"], balance["ratio"])
        if args.out:
            _sort_response_csv(resp, args.out, args.fmt)
        if not resp["verified"]:
            print("FAILED checks: " + "; ".join(resp["failures"]), file=sys.stderr)
            return 2
        return 0

    result = bench.run_benchmark(_run_spec(args))
    print(f"run {result.run_id}")
    _print_phases(result.report.phase_seconds)
    print(f"  {'baseline_sort':<18} {result.baseline_seconds:.4f}s")
    _print_balance(result.balance.counts, result.balance.shares, result.balance.ratio)
    if not result.verified:
        print("FAILED checks: " + "; ".join(result.failures), file=sys.stderr)
        return 2
    return 0


def _cmd_sort_tcp_worker(args: argparse.Namespace) -> int:
    """One worker process of a TCP cluster, driven by --listen/--peers."""
    if not (args.listen and args.peers):
        raise ParameterError("tcp worker mode needs both --listen and --peers")
    peers = tuple(addr.strip() for addr in args.peers.split(",") if addr.strip())
    if args.listen not in peers:
        raise ParameterError(f"--listen {args.listen} must appear in --peers")
    worker_id = peers.index(args.listen)
    config = ClusterConfig(
        p=len(peers), threads=args.threads,
        sample=SampleConfig(multiplier=args.multiplier),
        transport="tcp", seed=args.seed,
    )
    keys = datagen.generate(_dist_from_args(args), args.n)
    shard = datagen.split_evenly(keys, len(peers))[worker_id]
    partition, report = run_worker_process(config, Endpoint(worker_id, peers), shard)
    if report is None:
        print(f"worker {worker_id}: holds {len(partition)} sorted records")
        return 0

    balance = bench.BalanceReport.from_report(report)
    print(f"cluster of {len(peers)} workers sorted {report.total} keys")
    _print_phases(report.phase_seconds)
    _print_balance(balance.counts, balance.shares, balance.ratio)
    ok = report.total == args.n
    nonempty = [r for r in report.key_ranges if r is not None]
    for prev, nxt in zip(nonempty, nonempty[1:]):
        ok = ok and prev[1] <= nxt[0]
    if args.out:
        result = bench.BenchmarkResult(
            run_id=_run_spec(args).run_id, spec=_run_spec(args), report=report,
            rep_phase_seconds=[dict(report.phase_seconds)], balance=balance,
            baseline_seconds=0.0, verified=ok,
            failures=[] if ok else ["cluster-level checks failed"],
        )
        bench.write_result(result, args.out, args.fmt)
    if not ok:
        print("FAILED checks: counts or ranges inconsistent", file=sys.stderr)
        return 2
    return 0


# -- sweep -----------------------------------------------------------------------


def _cmd_sweep(args: argparse.Namespace) -> int:
    multipliers = [float(m) for m in args.multipliers.split(",") if m.strip()]
    if args.server:
        resp = _post(args.server, "/sweep",
                     {"run": _run_payload(args), "multipliers": multipliers}).json()
        rows = resp["rows"]
        print(f"sweep {resp['run_id']} (server)")
        for row in rows:
            ratio = row["load_ratio"]
            ratio_str = "inf" if ratio is None else f"{ratio:.4f}"
            print(f"  x{row['multiplier']:<8g} ratio={ratio_str:<10} "
                  f"sample_bytes={row['sample_bytes']:<10} "
                  f"exchange={row['exchange_seconds']:.4f}s")
        if args.out:
            sweep_rows = [bench.SweepRow(
                multiplier=row["multiplier"],
                ratio=math.inf if row["load_ratio"] is None else row["load_ratio"],
                sample_bytes=row["sample_bytes"],
                exchange_seconds=row["exchange_seconds"],
                total_seconds=row["total_seconds"],
                verified=row["verified"],
            ) for row in rows]
            bench.write_sweep(sweep_rows, args.out, args.fmt)
        return 0 if all(row["verified"] for row in rows) else 2

    rows = bench.sweep_multiplier(_run_spec(args), multipliers)
    print(f"sweep {_run_spec(args).run_id}")
    for row in rows:
        ratio_str = "inf" if math.isinf(row.ratio) else f"{row.ratio:.4f}"
        print(f"  x{row.multiplier:<8g} ratio={ratio_str:<10} "
              f"sample_bytes={row.sample_bytes:<10} exchange={row.exchange_seconds:.4f}s")
    if args.out:
        bench.write_sweep(rows, args.out, args.fmt)
    return 0 if all(row.verified for row in rows) else 2


# -- mem -------------------------------------------------------------------------


def _cmd_mem(args: argparse.Namespace) -> int:
    if args.server:
        resp = _post(args.server, "/memory", _run_payload(args)).json()
        rows = [bench.MemoryRow(r["worker"], r["payload_bytes"], r["peak_aux_bytes"],
                                r["aux_over_payload"]) for r in resp["rows"]]
        print(f"memory {resp['run_id']} (server)")
    else:
        rows = bench.report_memory(_run_spec(args))
        print(f"memory {_run_spec(args).run_id}")
    for row in rows:
        print(f"  worker {row.worker:<3} payload={row.payload_bytes:<12} "
              f"aux={row.peak_aux_bytes:<12} aux/payload={row.aux_over_payload:.3f}")
    if args.out:
        bench.write_memory(rows, args.out, args.fmt)
    return 0


# -- serve -----------------------------------------------------------------------


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="samplesort",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "report CSV columns: " + ", ".join(CSV_COLUMNS) + "\n"
            "phase rows fill run_id/phase/seconds; balance rows fill the rest."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a key file")
    _add_dist_args(gen)
    gen.add_argument("--n", type=int, required=True, help="number of keys")
    gen.add_argument("--out", type=Path, required=True, help="output file")
    gen.add_argument("--text", action="store_true",
                     help="one decimal key per line instead of 8-byte LE binary")
    gen.add_argument("--server", default=None, help="generate via a running service")
    gen.set_defaults(func=_cmd_gen)

    sort = sub.add_parser("sort", help="run one distributed sort and report")
    _add_run_args(sort)
    sort.add_argument("--listen", default=None,
                      help="tcp worker mode: my host:port (must appear in --peers)")
    sort.add_argument("--peers", default=None,
                      help="tcp worker mode: comma-separated host:port per worker id")
    sort.set_defaults(func=_cmd_sort)

    sweep = sub.add_parser("sweep", help="compare sample-size multipliers")
    _add_run_args(sweep)
    sweep.add_argument("--multipliers", default="0.004,1.0,1.4",
                       help="comma-separated multipliers (default: 0.004,1.0,1.4)")
    sweep.set_defaults(func=_cmd_sweep)

    mem = sub.add_parser("mem", help="report per-worker peak auxiliary memory")
    _add_run_args(mem)
    mem.set_defaults(func=_cmd_mem)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SampleSortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
