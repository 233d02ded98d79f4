import numpy as np
import pytest

from samplesort.datagen import DistKind, DistributionSpec, generate, split_evenly
from samplesort.errors import InsufficientSamplesError, ParameterError
from samplesort.orchestrator import (
    PHASES,
    ClusterConfig,
    SortedPartition,
    distributed_sort,
    global_find,
    multi_sort,
    origin_of,
)
from samplesort.partition import SampleConfig


def sort_dataset(keys, p, threads=1, backend="inproc", multiplier=1.0):
    cfg = ClusterConfig(p=p, threads=threads, transport=backend,
                        sample=SampleConfig(multiplier=multiplier))
    shards = split_evenly(np.asarray(keys), p)
    return shards, *distributed_sort(cfg, shards)


def merged_keys(partitions):
    return np.concatenate([pt.keys for pt in partitions])


def test_single_worker_degenerate():
    shards, parts, report = sort_dataset(np.array([3, 1, 2]), p=1)
    assert parts[0].keys.tolist() == [1, 2, 3]
    assert parts[0].origin_indices.tolist() == [1, 2, 0]
    assert set(report.phase_seconds) == set(PHASES)
    assert all(v >= 0 for v in report.phase_seconds.values())


def test_eight_workers_match_reference(rng):
    keys = rng.integers(0, 2**32, 100_000)
    shards, parts, report = sort_dataset(keys, p=8, threads=2)
    assert np.array_equal(merged_keys(parts), np.sort(keys))
    assert sum(report.counts) == keys.size
    # global order across workers
    for a, b in zip(parts, parts[1:]):
        if len(a) and len(b):
            assert a.keys[-1] <= b.keys[0]


def test_provenance_round_trips_every_record(rng):
    keys = rng.integers(0, 100, 2_000)  # heavy ties
    shards, parts, _ = sort_dataset(keys, p=4)
    seen = set()
    for pt in parts:
        for i in range(len(pt)):
            ow, oi = origin_of(parts, pt.worker_id, i)
            assert shards[ow][oi] == pt.keys[i]
            seen.add((ow, oi))
    assert len(seen) == keys.size  # provenance pairs stay globally unique


def test_duplicated_dataset_provenance_unique():
    keys = generate(
        DistributionSpec(kind=DistKind.DUPLICATED, fraction=1.0, distinct=2, seed=8), 3_000
    )
    shards, parts, _ = sort_dataset(keys, p=6)
    pairs = set()
    for pt in parts:
        pairs.update(zip(pt.origin_workers.tolist(), pt.origin_indices.tolist()))
    assert len(pairs) == keys.size


def test_right_skewed_balance_ten_workers():
    keys = generate(DistributionSpec(kind=DistKind.RIGHT_SKEWED, seed=13), 100_000)
    _, parts, report = sort_dataset(keys, p=10)
    shares = [100.0 * c / keys.size for c in report.counts]
    assert all(9.0 <= s <= 11.0 for s in shares)


def test_report_phases_complete_and_nonnegative(rng):
    keys = rng.integers(0, 1000, 10_000)
    _, _, report = sort_dataset(keys, p=4)
    assert tuple(report.phase_seconds) == PHASES
    assert all(v >= 0.0 for v in report.phase_seconds.values())
    assert len(report.worker_phase_seconds) == 4


def test_memory_bound(rng):
    keys = rng.integers(0, 2**32, 100_000)
    _, _, report = sort_dataset(keys, p=4)
    for aux, payload in zip(report.peak_aux_bytes, report.payload_bytes):
        assert payload > 0
        assert aux <= 2.5 * payload


def test_empty_total_input():
    _, parts, report = sort_dataset(np.empty(0, np.int64), p=4)
    assert all(len(pt) == 0 for pt in parts)
    assert report.counts == [0, 0, 0, 0]
    assert all(v == 0.0 for v in report.phase_seconds.values())
    assert report.key_ranges == [None] * 4


def test_some_workers_empty_input():
    # Only worker 0 holds data; the sort must still spread it.
    shards = [np.arange(1000, dtype=np.int64)] + [np.empty(0, np.int64)] * 3
    parts, report = distributed_sort(ClusterConfig(p=4), shards)
    assert np.array_equal(merged_keys(parts), np.arange(1000))
    assert sum(report.counts) == 1000


def test_determinism_across_runs_and_backends(rng):
    keys = rng.integers(0, 2**32, 30_000)
    _, parts_a, _ = sort_dataset(keys, p=4)
    _, parts_b, _ = sort_dataset(keys, p=4)
    _, parts_tcp, _ = sort_dataset(keys, p=4, backend="tcp")
    for a, b, c in zip(parts_a, parts_b, parts_tcp):
        assert np.array_equal(a.keys, b.keys)
        assert np.array_equal(a.keys, c.keys)
        assert np.array_equal(a.origin_indices, b.origin_indices)
        assert np.array_equal(a.origin_indices, c.origin_indices)


# -- global_find -----------------------------------------------------------------


def test_global_find_trivial_bounds(rng):
    keys = rng.integers(100, 200, 5_000)
    _, parts, _ = sort_dataset(keys, p=4)
    assert global_find(parts, 0) == (0, 0)  # below global min
    assert global_find(parts, 10**9) is None  # above global max


def test_global_find_matches_linear_scan(rng):
    keys = rng.integers(0, 5_000, 10_000)
    _, parts, _ = sort_dataset(keys, p=5)
    merged = merged_keys(parts)
    bounds = np.cumsum([0] + [len(pt) for pt in parts])
    for needle in rng.integers(-10, 5_100, 200):
        hit = global_find(parts, int(needle))
        scan = int(np.searchsorted(merged, needle, side="left"))  # linear-scan equivalent
        if scan == merged.size:
            assert hit is None
        else:
            w = int(np.searchsorted(bounds, scan, side="right")) - 1
            assert hit == (w, scan - bounds[w])


def test_global_find_all_empty_returns_none():
    _, parts, _ = sort_dataset(np.empty(0, np.int64), p=3)
    assert global_find(parts, 42) is None


def test_global_find_skips_empty_partitions():
    dtype = np.int64
    parts = [
        SortedPartition(0, np.empty(0, dtype), np.empty(0, np.int32), np.empty(0, np.int64)),
        SortedPartition(1, np.array([5, 7], dtype), np.zeros(2, np.int32), np.arange(2)),
    ]
    assert global_find(parts, 6) == (1, 1)
    assert global_find(parts, 1) == (1, 0)


def test_origin_of_bounds_errors(rng):
    keys = rng.integers(0, 100, 1_000)
    _, parts, _ = sort_dataset(keys, p=2)
    with pytest.raises(IndexError):
        origin_of(parts, 5, 0)
    with pytest.raises(IndexError):
        origin_of(parts, 0, 10**6)


# -- multi_sort --------------------------------------------------------------------


def test_multi_sort_single_dataset_equivalent(rng):
    keys = rng.integers(0, 10**6, 20_000)
    cfg = ClusterConfig(p=4)
    shards = split_evenly(keys, 4)
    solo_parts, _ = distributed_sort(cfg, shards)
    (multi_parts, _), = multi_sort(cfg, [shards])
    for a, b in zip(solo_parts, multi_parts):
        assert np.array_equal(a.keys, b.keys)


def test_multi_sort_mixed_key_types(rng):
    ints = rng.integers(0, 10**6, 8_000)
    dt = np.dtype([("a", "<i8"), ("b", "<i8")])
    pairs = np.zeros(8_000, dt)
    pairs["a"] = rng.integers(0, 100, 8_000)
    pairs["b"] = rng.integers(0, 10**6, 8_000)
    cfg = ClusterConfig(p=4)
    results = multi_sort(cfg, [split_evenly(ints, 4), split_evenly(pairs, 4)])
    assert np.array_equal(merged_keys(results[0][0]), np.sort(ints))
    assert np.array_equal(merged_keys(results[1][0]), np.sort(pairs))


def test_multi_sort_zero_datasets():
    assert multi_sort(ClusterConfig(p=2), []) == []


def test_run_worker_process_assembles_master_report(rng):
    import socket
    import threading

    from samplesort.orchestrator import run_worker_process
    from samplesort.transport import Endpoint

    socks = [socket.socket() for _ in range(2)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    peers = tuple(f"127.0.0.1:{s.getsockname()[1]}" for s in socks)
    for s in socks:
        s.close()

    keys = rng.integers(0, 10**6, 10_000)
    shards = split_evenly(keys, 2)
    cfg = ClusterConfig(p=2, transport="tcp")
    results = [None, None]
    errors = []

    def worker(w):
        try:
            results[w] = run_worker_process(cfg, Endpoint(w, peers), shards[w])
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(w,)) for w in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    part0, report = results[0]
    part1, worker_report = results[1]
    assert worker_report is None
    assert report is not None
    assert report.counts == [len(part0), len(part1)]
    assert sum(report.counts) == keys.size
    assert np.array_equal(
        np.concatenate([part0.keys, part1.keys]), np.sort(keys)
    )
    assert set(report.phase_seconds) == set(PHASES)


# -- error handling ---------------------------------------------------------------


def test_insufficient_samples_names_step():
    # Two records across eight workers cannot yield seven splitters.
    shards = [np.array([1], dtype=np.int64), np.array([2], dtype=np.int64)] + [
        np.empty(0, np.int64)
    ] * 6
    with pytest.raises(InsufficientSamplesError, match="splitter_selection"):
        distributed_sort(ClusterConfig(p=8), shards)


def test_config_validation():
    with pytest.raises(ParameterError):
        ClusterConfig(p=0)
    with pytest.raises(ParameterError):
        ClusterConfig(threads=0)
    with pytest.raises(ParameterError):
        ClusterConfig(transport="carrier-pigeon")


def test_input_validation(rng):
    with pytest.raises(ParameterError, match="worker inputs"):
        distributed_sort(ClusterConfig(p=2), [np.arange(3)])
    with pytest.raises(ParameterError, match="dtype"):
        distributed_sort(
            ClusterConfig(p=2), [np.arange(3, dtype=np.int64), np.arange(3, dtype=np.int32)]
        )


def test_structured_global_find(rng):
    dt = np.dtype([("a", "<i8"), ("b", "<i8")])
    pairs = np.zeros(2_000, dt)
    pairs["a"] = rng.integers(0, 20, 2_000)
    pairs["b"] = rng.integers(0, 1000, 2_000)
    _, parts, _ = sort_dataset(pairs, p=3)
    merged = merged_keys(parts)
    probe = merged[777]
    w, i = global_find(parts, tuple(probe.item()))
    assert parts[w].keys[i] == probe
