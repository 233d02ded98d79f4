"""Per-worker parallel sort: chunked quicksort plus a balanced pairwise merge.

The data is split near-equally across worker threads, each chunk is sorted
independently, and the sorted runs are then combined by a stride-doubling
schedule that always pairs neighbouring, near-equal-size runs: round 1 merges
run 1 into run 0, run 3 into run 2, and so on; round k pairs runs 2^k apart.
Every merge is out-of-place into a scratch buffer that ping-pongs between
rounds.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, ParameterError
from .metering import MemoryMeter

Pair = tuple[int, int]  # (destination run, source run)


@dataclass(frozen=True)
class MergeSchedule:
    """Rounds of disjoint (destination, source) run pairs.

    Within a round no run index appears twice, so all pairs of a round may
    execute concurrently. After the last round only run 0 remains.
    """

    num_runs: int
    rounds: tuple[tuple[Pair, ...], ...]


def merge_schedule(num_runs: int) -> MergeSchedule:
    """Build the balanced pairwise schedule for ``num_runs`` sorted runs.

    Round 1 merges each odd-indexed run into the even-indexed run before it;
    round k pairs runs at stride 2^(k-1) apart. A trailing run without a
    partner carries forward unmerged to the next round, so ceil(log2) rounds
    always suffice.
    """
    if num_runs < 1:
        raise ParameterError(f"num_runs must be >= 1, got {num_runs}")
    rounds = []
    stride = 1
    while stride < num_runs:
        pairs = tuple(
            (dest, dest + stride)
            for dest in range(0, num_runs - stride, 2 * stride)
        )
        rounds.append(pairs)
        stride *= 2
    return MergeSchedule(num_runs, tuple(rounds))


def _chunk_bounds(n: int, parts: int) -> list[tuple[int, int]]:
    """Near-equal split of range(n): chunk sizes differ by at most one."""
    base, extra = divmod(n, parts)
    bounds = []
    start = 0
    for i in range(parts):
        stop = start + base + (1 if i < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def _merge_adjacent(src_cols, dst_cols, a0: int, a1: int, b1: int,
                    meter: MemoryMeter | None = None) -> None:
    """Merge the sorted spans [a0, a1) and [a1, b1) of every column into dst.

    The merge permutation comes from a stable sort over the pair of runs
    (a single run-aware merge pass for native dtypes) and is applied to the
    key column and every satellite alike; tied keys from the left span land
    before those from the right span.
    """
    if a0 == a1 or a1 == b1:
        for src, dst in zip(src_cols, dst_cols):
            dst[a0:b1] = src[a0:b1]
        return
    perm_bytes = (b1 - a0) * 8
    if meter is not None:
        meter.alloc(perm_bytes)
    perm = np.argsort(src_cols[0][a0:b1], kind="stable")
    for src, dst in zip(src_cols, dst_cols):
        np.take(src[a0:b1], perm, out=dst[a0:b1])
    if meter is not None:
        meter.free(perm_bytes)


def _merge_rounds(
    columns: list[np.ndarray],
    run_sizes: Sequence[int],
    schedule: MergeSchedule,
    threads: int = 1,
    meter: MemoryMeter | None = None,
) -> list[np.ndarray]:
    """Run the schedule over runs laid out back to back in each column.

    Returns the buffers holding the final merged data (either the inputs or
    the internally allocated scratch, depending on round parity).
    """
    if schedule.num_runs != len(run_sizes):
        raise ContractError(
            f"schedule built for {schedule.num_runs} runs, got {len(run_sizes)}"
        )
    total = int(sum(run_sizes))
    if total != columns[0].size:
        raise ContractError(f"run sizes sum to {total}, columns hold {columns[0].size}")
    if not schedule.rounds:
        return columns

    spans: dict[int, tuple[int, int]] = {}
    start = 0
    for idx, size in enumerate(run_sizes):
        spans[idx] = (start, start + int(size))
        start += int(size)

    scratch_bytes = sum(c.nbytes for c in columns)
    if meter is not None:
        meter.alloc(scratch_bytes)
    cur = columns
    alt = [np.empty_like(c) for c in columns]
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for pairs in schedule.rounds:
            touched = {run for pair in pairs for run in pair}
            tasks = []
            for dest, src in pairs:
                a0, a1 = spans[dest]
                b0, b1 = spans[src]
                if a1 != b0:
                    raise ContractError(
                        f"pair ({dest}, {src}) does not merge adjacent spans; "
                        "use merge_schedule() to build schedules"
                    )
                tasks.append((a0, a1, b1))
                spans[dest] = (a0, b1)
                del spans[src]
            carried = [spans[run] for run in spans if run not in touched]

            def _round_task(args, _cur=cur, _alt=alt):
                a0, a1, b1 = args
                _merge_adjacent(_cur, _alt, a0, a1, b1, meter)

            if pool is not None:
                list(pool.map(_round_task, tasks))
            else:
                for args in tasks:
                    _round_task(args)
            for lo, hi in carried:
                for src_col, dst_col in zip(cur, alt):
                    dst_col[lo:hi] = src_col[lo:hi]
            cur, alt = alt, cur
    finally:
        if pool is not None:
            pool.shutdown()
    if meter is not None:
        meter.free(scratch_bytes)
    return cur


def parallel_local_sort(data, threads: int) -> np.ndarray:
    """Sort a key sequence using ``threads`` equal chunks and balanced merging.

    The output is a nondecreasing permutation of the input. Chunk sizes differ
    by at most one; with a single thread this reduces to a plain sort.
    """
    if threads < 1:
        raise ParameterError(f"threads must be >= 1, got {threads}")
    arr = np.asarray(data)
    buf = arr.copy()
    bounds = _chunk_bounds(buf.size, threads)

    def _sort_chunk(span):
        lo, hi = span
        buf[lo:hi].sort(kind="quicksort")

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(_sort_chunk, bounds))
    else:
        _sort_chunk(bounds[0])
    sizes = [hi - lo for lo, hi in bounds]
    return _merge_rounds([buf], sizes, merge_schedule(threads), threads)[0]


def sort_with_order(
    data: np.ndarray,
    threads: int,
    meter: MemoryMeter | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Sort keys and return the permutation that produced the order.

    ``order[i]`` is the position of output key ``i`` in the original input.
    The returned buffers are registered with ``meter``; the caller owns
    freeing them.
    """
    if threads < 1:
        raise ParameterError(f"threads must be >= 1, got {threads}")
    arr = np.asarray(data)
    keys = np.empty_like(arr)
    order = np.empty(arr.size, dtype=np.int64)
    if meter is not None:
        meter.alloc(keys.nbytes + order.nbytes)
    bounds = _chunk_bounds(arr.size, threads)

    def _sort_chunk(span):
        lo, hi = span
        rel = np.argsort(arr[lo:hi], kind="quicksort")
        keys[lo:hi] = arr[lo:hi][rel]
        rel += lo
        order[lo:hi] = rel

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(_sort_chunk, bounds))
    else:
        for span in bounds:
            _sort_chunk(span)
    sizes = [hi - lo for lo, hi in bounds]
    merged = _merge_rounds([keys, order], sizes, merge_schedule(threads), threads, meter)
    return merged[0], merged[1]


def merge_runs(runs: Sequence[np.ndarray], schedule: MergeSchedule, threads: int = 1) -> np.ndarray:
    """Merge presorted runs according to ``schedule`` into one sorted array."""
    if schedule.num_runs != len(runs):
        raise ContractError(
            f"schedule built for {schedule.num_runs} runs, got {len(runs)}"
        )
    buf = np.concatenate(list(runs))
    sizes = [run.size for run in runs]
    return _merge_rounds([buf], sizes, schedule, threads)[0]


def merge_runs_with_satellites(
    keys: np.ndarray,
    satellites: Sequence[np.ndarray],
    run_sizes: Sequence[int],
    threads: int = 1,
    meter: MemoryMeter | None = None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Merge runs of a key column, permuting satellite columns alongside."""
    schedule = merge_schedule(len(run_sizes))
    cols = _merge_rounds([keys, *satellites], run_sizes, schedule, threads, meter)
    return cols[0], cols[1:]
