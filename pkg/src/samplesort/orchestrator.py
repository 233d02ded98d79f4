"""The six-step distributed sort pipeline and the post-sort query API.

Each worker: (1) sorts its data locally with chunked parallel quicksort and
balanced merging, (2) ships regular samples to the master, (3) receives the
broadcast splitters, (4) cuts its sorted data into destination ranges and
shares the size matrix, (5) exchanges ranges with every peer concurrently at
precomputed landing offsets, and (6) merges the arriving sorted runs with the
same balanced schedule. Provenance (origin worker and original index) is
attached before the local sort and carried through every step.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Any, Iterator, Sequence

import numpy as np

from . import local_sort, partition, transport
from .errors import ParameterError, SampleSortError, TransportError
from .metering import MemoryMeter, PhaseTimer
from .transport import DEFAULT_TIMEOUT

PHASES = (
    "local_sort",
    "sampling",
    "splitter_selection",
    "partitioning",
    "exchange",
    "final_merge",
)

BACKENDS = ("inproc", "tcp")


@dataclass(frozen=True)
class Record:
    """One sorted entry: its key plus where it came from."""

    key: Any
    origin_worker: int
    origin_index: int


@dataclass(frozen=True)
class ClusterConfig:
    p: int = 4
    threads: int = 1
    sample: partition.SampleConfig = field(default_factory=partition.SampleConfig)
    transport: str = "inproc"
    seed: int = 0
    recv_timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ParameterError(f"p must be >= 1, got {self.p}")
        if self.threads < 1:
            raise ParameterError(f"threads must be >= 1, got {self.threads}")
        if self.transport not in BACKENDS:
            raise ParameterError(
                f"transport must be one of {BACKENDS}, got {self.transport!r}"
            )


@dataclass
class SortedPartition:
    """One worker's share of the result, nondecreasing by key.

    Columnar storage: ``keys[i]`` belongs to the record whose provenance is
    ``(origin_workers[i], origin_indices[i])``.
    """

    worker_id: int
    keys: np.ndarray
    origin_workers: np.ndarray
    origin_indices: np.ndarray

    def __len__(self) -> int:
        return int(self.keys.size)

    @property
    def key_range(self) -> tuple | None:
        if self.keys.size == 0:
            return None
        return (self.keys[0].item(), self.keys[-1].item())

    def record(self, i: int) -> Record:
        if not 0 <= i < self.keys.size:
            raise IndexError(f"record index {i} outside 0..{self.keys.size - 1}")
        return Record(self.keys[i].item(), int(self.origin_workers[i]),
                      int(self.origin_indices[i]))

    def records(self) -> Iterator[Record]:
        for i in range(self.keys.size):
            yield self.record(i)


@dataclass
class SortReport:
    """Wall times per step plus per-worker balance and memory figures."""

    p: int
    total: int
    phase_seconds: dict[str, float]
    worker_phase_seconds: list[dict[str, float]]
    counts: list[int]
    key_ranges: list[tuple | None]
    peak_aux_bytes: list[int]
    payload_bytes: list[int]

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "total": self.total,
            "phase_seconds": dict(self.phase_seconds),
            "worker_phase_seconds": [dict(d) for d in self.worker_phase_seconds],
            "counts": list(self.counts),
            "key_ranges": [list(r) if r is not None else None for r in self.key_ranges],
            "peak_aux_bytes": list(self.peak_aux_bytes),
            "payload_bytes": list(self.payload_bytes),
        }


@dataclass
class _WorkerOutcome:
    partition: SortedPartition
    phase_seconds: dict[str, float]
    peak_aux: int
    payload: int


def _empty_partition(worker_id: int, dtype: np.dtype) -> SortedPartition:
    return SortedPartition(
        worker_id,
        np.empty(0, dtype=dtype),
        np.empty(0, dtype=np.int32),
        np.empty(0, dtype=np.int64),
    )


def _worker_body(
    w: int,
    cfg: ClusterConfig,
    tp: transport.Transport,
    local_keys: np.ndarray,
    dtype: np.dtype,
) -> _WorkerOutcome:
    p = cfg.p
    meter = MemoryMeter()
    timer = PhaseTimer(PHASES)
    try:
        return _worker_steps(w, cfg, tp, local_keys, dtype, meter, timer)
    except BaseException as exc:
        exc._sort_step = timer.active or "startup"  # type: ignore[attr-defined]
        raise


def _worker_steps(
    w: int,
    cfg: ClusterConfig,
    tp: transport.Transport,
    local_keys: np.ndarray,
    dtype: np.dtype,
    meter: MemoryMeter,
    timer: PhaseTimer,
) -> _WorkerOutcome:
    p = cfg.p

    with timer.phase("local_sort"):
        sorted_keys, order = local_sort.sort_with_order(local_keys, cfg.threads, meter)

    with timer.phase("sampling"):
        sample_cfg = replace(cfg.sample, key_bytes=dtype.itemsize)
        k = partition.sample_count(p, sample_cfg)
        samples = partition.take_regular_samples(sorted_keys, k)
        gathered = tp.gather_to_master(samples.tobytes())

    with timer.phase("splitter_selection"):
        if w == transport.MASTER:
            assert gathered is not None
            merged = np.sort(np.concatenate(
                [np.frombuffer(blob, dtype=dtype) for blob in gathered]
            ), kind="quicksort")
            splitters = partition.select_splitters(merged, p)
            tp.broadcast_from_master(splitters.splitters.tobytes())
        else:
            blob = tp.broadcast_from_master(None)
            splitters = partition.SplitterSet(np.frombuffer(blob, dtype=dtype))

    with timer.phase("partitioning"):
        plan = partition.partition_local(sorted_keys, splitters)
        row = np.ascontiguousarray(plan.sizes(), dtype=np.int64)
        rows = tp.gather_to_master(row.tobytes())
        if w == transport.MASTER:
            assert rows is not None
            matrix_bytes = b"".join(rows)
            tp.broadcast_from_master(matrix_bytes)
        else:
            matrix_bytes = tp.broadcast_from_master(None)
        matrix = np.frombuffer(matrix_bytes, dtype=np.int64).reshape(p, p)

    with timer.phase("exchange"):
        cuts = plan.cuts
        in_keys = tp.exchange(matrix, [sorted_keys[cuts[d]:cuts[d + 1]] for d in range(p)])
        in_idx = tp.exchange(matrix, [order[cuts[d]:cuts[d + 1]] for d in range(p)])
        in_src = np.repeat(np.arange(p, dtype=np.int32), matrix[:, w])
        meter.alloc(in_keys.nbytes + in_idx.nbytes + in_src.nbytes)
        meter.free(sorted_keys.nbytes + order.nbytes)
        run_sizes = [int(c) for c in matrix[:, w]]
        del sorted_keys, order

    with timer.phase("final_merge"):
        keys_f, (src_f, idx_f) = local_sort.merge_runs_with_satellites(
            in_keys, [in_src, in_idx], run_sizes, cfg.threads, meter
        )

    part = SortedPartition(w, keys_f, src_f, idx_f)
    payload = keys_f.nbytes + src_f.nbytes + idx_f.nbytes
    return _WorkerOutcome(part, timer.seconds, max(meter.peak - payload, 0), payload)


def _build_cluster(cfg: ClusterConfig) -> tuple[list[transport.Transport], Any]:
    if cfg.transport == "tcp":
        transports = transport.create_tcp_cluster(cfg.p, recv_timeout=cfg.recv_timeout)
        return transports, None
    cluster = transport.InprocCluster(cfg.p, recv_timeout=cfg.recv_timeout)
    return list(cluster.transports), cluster


def distributed_sort(
    config: ClusterConfig,
    inputs: Sequence[np.ndarray],
    transports: Sequence[transport.Transport] | None = None,
) -> tuple[list[SortedPartition], SortReport]:
    """Sort the union of the per-worker inputs across the cluster.

    Returns one partition per worker (concatenating them in worker-id order
    gives the fully sorted sequence) and the step-by-step report. Passing
    ``transports`` overrides the backend named in the config, which test
    fabrics use.
    """
    if len(inputs) != config.p:
        raise ParameterError(f"expected {config.p} worker inputs, got {len(inputs)}")
    arrays = [np.ascontiguousarray(a) for a in inputs]
    dtype = arrays[0].dtype
    for i, a in enumerate(arrays):
        if a.dtype != dtype:
            raise ParameterError(
                f"inputs[{i}] has dtype {a.dtype}, expected {dtype} like inputs[0]"
            )
        if a.ndim != 1:
            raise ParameterError(f"inputs[{i}] must be one-dimensional")
    total = sum(a.size for a in arrays)
    if total == 0:
        report = SortReport(
            p=config.p,
            total=0,
            phase_seconds={ph: 0.0 for ph in PHASES},
            worker_phase_seconds=[{ph: 0.0 for ph in PHASES} for _ in range(config.p)],
            counts=[0] * config.p,
            key_ranges=[None] * config.p,
            peak_aux_bytes=[0] * config.p,
            payload_bytes=[0] * config.p,
        )
        return [_empty_partition(w, dtype) for w in range(config.p)], report

    own_cluster = None
    if transports is None:
        transports, own_cluster = _build_cluster(config)
    if len(transports) != config.p:
        raise ParameterError(f"need {config.p} transports, got {len(transports)}")

    outcomes: list[_WorkerOutcome | None] = [None] * config.p
    failures: list[tuple[int, str, BaseException]] = []
    failures_lock = threading.Lock()

    def _run(w: int) -> None:
        step = "startup"
        try:
            timer_aware = _worker_body(w, config, transports[w], arrays[w], dtype)
            outcomes[w] = timer_aware
        except BaseException as exc:
            step = getattr(exc, "_sort_step", step)
            with failures_lock:
                failures.append((w, step, exc))
            for t in transports:
                t.abort(f"worker {w} failed: {exc}")

    threads = [threading.Thread(target=_run, args=(w,), daemon=True) for w in range(config.p)]
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        for t in transports:
            t.close()
        if own_cluster is not None:
            own_cluster.close()

    if failures:
        raise _primary_failure(failures)

    parts = [outcome.partition for outcome in outcomes]  # type: ignore[union-attr]
    report = SortReport(
        p=config.p,
        total=total,
        phase_seconds={
            ph: max(o.phase_seconds[ph] for o in outcomes) for ph in PHASES  # type: ignore[union-attr]
        },
        worker_phase_seconds=[dict(o.phase_seconds) for o in outcomes],  # type: ignore[union-attr]
        counts=[len(o.partition) for o in outcomes],  # type: ignore[union-attr]
        key_ranges=[o.partition.key_range for o in outcomes],  # type: ignore[union-attr]
        peak_aux_bytes=[o.peak_aux for o in outcomes],  # type: ignore[union-attr]
        payload_bytes=[o.payload for o in outcomes],  # type: ignore[union-attr]
    )
    return parts, report


def _primary_failure(failures: list[tuple[int, str, BaseException]]) -> BaseException:
    """Pick the root cause: abort-induced transport errors are secondary."""
    ordered = sorted(failures, key=lambda f: isinstance(f[2], TransportError))
    worker, step, exc = ordered[0]
    if isinstance(exc, SampleSortError):
        wrapped = type(exc)(f"worker {worker}, step {step}: {exc}")
    else:
        wrapped = SampleSortError(f"worker {worker}, step {step}: {exc!r}")
    wrapped.__cause__ = exc
    return wrapped


def _as_key_scalar(key, dtype: np.dtype):
    if dtype.names:
        return np.array(tuple(key), dtype=dtype)[()]
    return np.asarray(key, dtype=dtype)[()]


def global_find(partitions: Sequence[SortedPartition], key) -> tuple[int, int] | None:
    """Smallest (worker_id, local_index) whose key is >= ``key``, else None.

    Two-level binary search: first over the per-worker key ranges, then
    within the chosen worker's partition.
    """
    nonempty = [pt for pt in partitions if len(pt) > 0]
    if not nonempty:
        return None
    dtype = nonempty[0].keys.dtype
    needle = _as_key_scalar(key, dtype)
    maxs = np.concatenate([pt.keys[-1:] for pt in nonempty])
    which = int(np.searchsorted(maxs, needle, side="left"))
    if which == maxs.size:
        return None
    pt = nonempty[which]
    idx = int(np.searchsorted(pt.keys, needle, side="left"))
    return (pt.worker_id, idx)


def origin_of(partitions: Sequence[SortedPartition], worker_id: int, local_index: int) -> tuple[int, int]:
    """Provenance (origin_worker, origin_index) of one sorted record."""
    if not 0 <= worker_id < len(partitions):
        raise IndexError(f"worker_id {worker_id} outside 0..{len(partitions) - 1}")
    pt = partitions[worker_id]
    if not 0 <= local_index < len(pt):
        raise IndexError(
            f"local_index {local_index} outside 0..{len(pt) - 1} on worker {worker_id}"
        )
    return (int(pt.origin_workers[local_index]), int(pt.origin_indices[local_index]))


def run_worker_process(
    config: ClusterConfig,
    endpoint: transport.Endpoint,
    local_keys: np.ndarray,
) -> tuple[SortedPartition, SortReport | None]:
    """Run one worker of a multi-process TCP cluster.

    Every process sorts its shard in place; afterwards the master gathers the
    per-worker statistics and returns the assembled report (other workers
    return None for it). The sorted partitions stay in their processes.
    """
    import json

    if config.p != len(endpoint.peers):
        raise ParameterError(
            f"config.p={config.p} but endpoint lists {len(endpoint.peers)} peers"
        )
    arr = np.ascontiguousarray(local_keys)
    tp = transport.TcpTransport(endpoint, recv_timeout=config.recv_timeout)
    try:
        outcome = _worker_body(endpoint.worker_id, config, tp, arr, arr.dtype)
        rng = outcome.partition.key_range
        stats = json.dumps({
            "phase_seconds": outcome.phase_seconds,
            "count": len(outcome.partition),
            "key_range": [int(rng[0]), int(rng[1])] if rng is not None else None,
            "peak_aux": outcome.peak_aux,
            "payload": outcome.payload,
        }).encode()
        gathered = tp.gather_to_master(stats)
    finally:
        tp.close()
    if gathered is None:
        return outcome.partition, None
    decoded = [json.loads(blob) for blob in gathered]
    report = SortReport(
        p=config.p,
        total=sum(d["count"] for d in decoded),
        phase_seconds={
            ph: max(d["phase_seconds"][ph] for d in decoded) for ph in PHASES
        },
        worker_phase_seconds=[d["phase_seconds"] for d in decoded],
        counts=[d["count"] for d in decoded],
        key_ranges=[tuple(d["key_range"]) if d["key_range"] else None for d in decoded],
        peak_aux_bytes=[d["peak_aux"] for d in decoded],
        payload_bytes=[d["payload"] for d in decoded],
    )
    return outcome.partition, report


def multi_sort(
    config: ClusterConfig,
    datasets: Sequence[Sequence[np.ndarray]],
) -> list[tuple[list[SortedPartition], SortReport]]:
    """Sort several independent datasets; each result matches distributed_sort.

    Datasets may use different key dtypes. Failures are reported per dataset
    with the dataset index named.
    """
    results = []
    for i, dataset in enumerate(datasets):
        try:
            results.append(distributed_sort(config, dataset))
        except SampleSortError as exc:
            raise type(exc)(f"dataset {i}: {exc}") from exc
    return results
