"""Sampling, splitter selection, and duplicate-aware range partitioning.

Workers take regular samples of their sorted data, sized so each worker ships
roughly ``multiplier * buffer_bytes / p`` bytes to the master. The master
picks p-1 splitters at evenly spaced ranks of the merged samples and
broadcasts them. Each worker then binary-searches the splitters in its sorted
data to cut it into p destination ranges.

Splitters may repeat when one key dominates the samples. A run of g equal
splitters is then resolved with a single binary-search pair (first/last
occurrence of the value) and the equal-key range is divided into g+1
near-equal consecutive pieces across the g+1 destinations touching that
splitter group, which is what keeps heavily duplicated datasets balanced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InsufficientSamplesError, ParameterError

DEFAULT_BUFFER_BYTES = 256 * 1024


def lex_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise a < b, handling structured dtypes field by field.

    Structured arrays sort lexicographically by field order but do not
    support the comparison ufuncs directly.
    """
    if a.dtype.names is None:
        return a < b
    lt = np.zeros(a.shape, dtype=bool)
    decided = np.zeros(a.shape, dtype=bool)
    for name in a.dtype.names:
        less = lex_less(a[name], b[name])
        greater = lex_less(b[name], a[name])
        lt |= ~decided & less
        decided |= less | greater
    return lt


def is_nondecreasing(arr: np.ndarray) -> bool:
    if arr.size < 2:
        return True
    return not bool(np.any(lex_less(arr[1:], arr[:-1])))


@dataclass(frozen=True)
class SampleConfig:
    """Per-worker sample sizing: a byte budget shared across p workers."""

    buffer_bytes: int = DEFAULT_BUFFER_BYTES
    multiplier: float = 1.0
    key_bytes: int = 8

    def __post_init__(self) -> None:
        if self.buffer_bytes <= 0:
            raise ParameterError(f"buffer_bytes must be > 0, got {self.buffer_bytes}")
        if self.multiplier <= 0:
            raise ParameterError(f"multiplier must be > 0, got {self.multiplier}")
        if self.key_bytes <= 0:
            raise ParameterError(f"key_bytes must be > 0, got {self.key_bytes}")


@dataclass(frozen=True)
class SplitterSet:
    """The p-1 global splitters, nondecreasing, duplicates permitted."""

    splitters: np.ndarray

    def __post_init__(self) -> None:
        if not is_nondecreasing(self.splitters):
            raise ContractError("splitters must be nondecreasing")

    @property
    def num_destinations(self) -> int:
        return self.splitters.size + 1


@dataclass(frozen=True)
class PartitionPlan:
    """p+1 nondecreasing cut indices; destination j owns [cuts[j], cuts[j+1])."""

    cuts: np.ndarray

    def __post_init__(self) -> None:
        c = self.cuts
        if c.size < 2 or c[0] != 0 or np.any(c[1:] < c[:-1]):
            raise ContractError("cuts must start at 0 and be nondecreasing")

    @property
    def num_destinations(self) -> int:
        return self.cuts.size - 1

    def sizes(self) -> np.ndarray:
        return np.diff(self.cuts)

    def ranges(self) -> list[tuple[int, int]]:
        return [(int(self.cuts[j]), int(self.cuts[j + 1])) for j in range(self.num_destinations)]


def sample_count(p: int, cfg: SampleConfig) -> int:
    """Samples each worker sends to the master for a p-worker cluster.

    max(1, floor(multiplier * buffer_bytes / (p * key_bytes))) for p > 1;
    a single worker needs no splitters and sends nothing.
    """
    if p < 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    if p == 1:
        return 0
    return max(1, math.floor(cfg.multiplier * cfg.buffer_bytes / (p * cfg.key_bytes)))


def take_regular_samples(local_sorted: np.ndarray, k: int) -> np.ndarray:
    """Take k samples at evenly spaced ranks floor((i+1)*len/(k+1)), i in 0..k-1.

    If k meets or exceeds the data length the whole sequence is returned.
    """
    m = local_sorted.size
    if k <= 0:
        return local_sorted[:0].copy()
    if k >= m:
        return local_sorted.copy()
    ranks = (np.arange(1, k + 1, dtype=np.int64) * m) // (k + 1)
    return local_sorted[ranks]


def select_splitters(all_samples: np.ndarray, p: int) -> SplitterSet:
    """Pick p-1 splitters at evenly spaced ranks of the merged sorted samples."""
    if p < 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    if p == 1:
        return SplitterSet(all_samples[:0].copy())
    n = all_samples.size
    if n < p - 1:
        raise InsufficientSamplesError(
            f"need at least {p - 1} samples for {p} workers, got {n}; "
            "raise the sample multiplier"
        )
    if not is_nondecreasing(all_samples):
        raise ContractError("all_samples must be sorted")
    ranks = (np.arange(1, p, dtype=np.int64) * n) // p
    return SplitterSet(all_samples[ranks])


def partition_local(local_sorted: np.ndarray, splitter_set: SplitterSet) -> PartitionPlan:
    """Cut locally sorted data into one range per destination worker.

    A unique splitter contributes a single lower-bound cut, so keys equal to
    it go to the destination the splitter opens. A run of g equal splitters
    instead spreads its g cuts evenly inside the span of keys equal to that
    value, splitting the span into g+1 near-equal pieces (earlier pieces take
    the remainder); keys strictly below the value stay with the destination
    preceding the run.
    """
    m = local_sorted.size
    if not is_nondecreasing(local_sorted):
        raise ContractError("local data must be sorted before partitioning")
    splitters = splitter_set.splitters
    p = splitters.size + 1
    cuts = np.empty(p + 1, dtype=np.int64)
    cuts[0] = 0
    cuts[p] = m

    values, starts, group_sizes = np.unique(splitters, return_index=True, return_counts=True)
    lows = np.searchsorted(local_sorted, values, side="left")
    highs = np.searchsorted(local_sorted, values, side="right")
    for value_idx in range(values.size):
        pos = int(starts[value_idx]) + 1  # first cut index owned by this group
        g = int(group_sizes[value_idx])
        lo = int(lows[value_idx])
        if g == 1:
            cuts[pos] = lo
            continue
        span = int(highs[value_idx]) - lo
        piece, extra = divmod(span, g + 1)
        for t in range(1, g + 1):
            cuts[pos + t - 1] = lo + t * piece + min(t, extra)
    return PartitionPlan(cuts)
