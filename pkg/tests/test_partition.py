import numpy as np
import pytest

from samplesort.datagen import DistKind, DistributionSpec, generate, split_evenly
from samplesort.errors import ContractError, InsufficientSamplesError, ParameterError
from samplesort.partition import (
    PartitionPlan,
    SampleConfig,
    SplitterSet,
    partition_local,
    sample_count,
    select_splitters,
    take_regular_samples,
)


def brute_force_destinations(keys, splitters):
    """Oracle for distinct splitters: a key equal to splitter j (1-indexed)
    belongs to destination j, i.e. dest = #{splitters <= key}."""
    return np.array([int(np.sum(splitters <= key)) for key in keys])


# -- sample_count ---------------------------------------------------------------


def test_sample_count_default_rule():
    assert sample_count(8, SampleConfig()) == 4096  # 256KB / (8 * 8B)


def test_sample_count_single_worker():
    assert sample_count(1, SampleConfig(multiplier=2.0)) == 0


def test_sample_count_small_multiplier():
    assert sample_count(8, SampleConfig(multiplier=0.004)) == 16


def test_sample_count_never_zero_for_clusters():
    assert sample_count(100_000, SampleConfig()) == 1


def test_sample_count_monotone_in_p():
    cfg = SampleConfig()
    counts = [sample_count(p, cfg) for p in range(2, 33)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_sample_count_linear_in_multiplier():
    base = sample_count(4, SampleConfig(multiplier=1.0))
    doubled = sample_count(4, SampleConfig(multiplier=2.0))
    assert doubled == 2 * base


def test_sample_config_validation():
    with pytest.raises(ParameterError, match="multiplier"):
        SampleConfig(multiplier=0.0)
    with pytest.raises(ParameterError, match="buffer_bytes"):
        SampleConfig(buffer_bytes=0)


# -- take_regular_samples ---------------------------------------------------------


def test_regular_samples_rank_formula():
    data = np.arange(1, 101)  # values 1..100
    out = take_regular_samples(data, 3)
    # Oracle: ranks floor((i+1)*100/4) = 25, 50, 75.
    expected_ranks = [(i + 1) * 100 // 4 for i in range(3)]
    assert expected_ranks == [25, 50, 75]
    assert out.tolist() == data[expected_ranks].tolist()


def test_regular_samples_empty_input():
    assert take_regular_samples(np.empty(0, np.int64), 5).size == 0


def test_regular_samples_all_equal():
    out = take_regular_samples(np.full(50, 7), 5)
    assert out.tolist() == [7] * 5


def test_regular_samples_k_exceeds_length():
    data = np.array([1, 2, 3])
    assert take_regular_samples(data, 10).tolist() == [1, 2, 3]


def test_regular_samples_output_sorted(rng):
    data = np.sort(rng.integers(0, 1000, 777))
    out = take_regular_samples(data, 32)
    assert np.all(np.diff(out) >= 0)


# -- select_splitters -------------------------------------------------------------


def test_select_splitters_single_worker():
    assert select_splitters(np.empty(0, np.int64), 1).splitters.size == 0


def test_select_splitters_rank_formula():
    samples = np.arange(1000)
    out = select_splitters(samples, 4)
    assert out.splitters.tolist() == [250, 500, 750]


def test_select_splitters_duplicate_heavy():
    # 90% of samples share one value: most splitters must equal it.
    samples = np.sort(np.concatenate([np.full(900, 42), np.arange(100)]))
    out = select_splitters(samples, 10)
    # Oracle: count selection ranks landing inside the duplicate block.
    ranks = [(j * 1000) // 10 for j in range(1, 10)]
    block_lo = np.searchsorted(samples, 42, side="left")
    block_hi = np.searchsorted(samples, 42, side="right")
    expected_dups = sum(block_lo <= r < block_hi for r in ranks)
    assert int(np.sum(out.splitters == 42)) == expected_dups
    assert expected_dups >= 8


def test_select_splitters_insufficient():
    with pytest.raises(InsufficientSamplesError, match="multiplier"):
        select_splitters(np.array([1, 2]), 4)


def test_select_splitters_unsorted_rejected():
    with pytest.raises(ContractError):
        select_splitters(np.array([3, 1, 2, 5]), 2)


# -- partition_local ---------------------------------------------------------------


def test_partition_empty_data():
    plan = partition_local(np.empty(0, np.int64), SplitterSet(np.array([5, 9])))
    assert plan.cuts.tolist() == [0, 0, 0, 0]
    assert all(lo == hi for lo, hi in plan.ranges())


def test_partition_no_splitters_single_range():
    plan = partition_local(np.arange(10), SplitterSet(np.empty(0, np.int64)))
    assert plan.cuts.tolist() == [0, 10]


def test_partition_distinct_matches_brute_force(rng):
    for trial in range(20):
        data = np.sort(rng.integers(0, 200, 500))
        splitters = np.unique(rng.integers(0, 200, 7))
        plan = partition_local(data, SplitterSet(splitters))
        dests = brute_force_destinations(data, splitters)
        expected_sizes = [int(np.sum(dests == j)) for j in range(splitters.size + 1)]
        assert plan.sizes().tolist() == expected_sizes


def test_partition_boundary_key_goes_right_of_its_splitter():
    data = np.array([1, 5, 5, 5, 9])
    plan = partition_local(data, SplitterSet(np.array([5])))
    # Keys equal to a unique splitter belong to the destination it opens.
    assert plan.ranges() == [(0, 1), (1, 5)]


def test_partition_duplicate_splitters_divide_equally():
    data = np.full(1000, 7)
    plan = partition_local(data, SplitterSet(np.array([7, 7, 7, 7])))
    assert plan.sizes().tolist() == [200, 200, 200, 200, 200]


def test_partition_duplicate_group_with_prefix_and_suffix():
    # 10 keys below, 100 equal, 10 above; 3 duplicated splitters on the value.
    data = np.sort(np.concatenate([np.arange(10), np.full(100, 50), np.arange(60, 70)]))
    plan = partition_local(data, SplitterSet(np.array([50, 50, 50])))
    sizes = plan.sizes().tolist()
    # Prefix stays with the first destination of the group; the equal run is
    # split into four 25-element pieces; the suffix joins the last piece.
    assert sizes == [10 + 25, 25, 25, 25 + 10]


def test_partition_duplicate_remainder_goes_to_early_pieces():
    data = np.full(102, 3)
    plan = partition_local(data, SplitterSet(np.array([3, 3, 3, 3])))
    assert plan.sizes().tolist() == [21, 21, 20, 20, 20]


@pytest.mark.parametrize("n,p", [(1000, 5), (1003, 7), (64, 16), (5, 8)])
def test_partition_all_equal_floor_ceil_balance(n, p):
    data = np.full(n, 11)
    plan = partition_local(data, SplitterSet(np.full(p - 1, 11)))
    sizes = plan.sizes()
    assert sizes.min() >= n // p
    assert sizes.max() <= -(-n // p)
    assert sizes.sum() == n


def test_partition_mixed_duplicate_groups(rng):
    data = np.sort(np.concatenate([np.full(300, 10), np.full(300, 20), rng.integers(0, 30, 400)]))
    splitters = np.sort(np.array([10, 10, 20, 20, 20, 25]))
    plan = partition_local(data, SplitterSet(splitters))
    cuts = plan.cuts
    assert cuts[0] == 0 and cuts[-1] == data.size
    assert np.all(np.diff(cuts) >= 0)


def test_partition_coverage_and_disjointness(rng):
    data = np.sort(rng.integers(0, 100, 1234))
    splitters = np.sort(rng.integers(0, 100, 9))
    plan = partition_local(data, SplitterSet(splitters))
    ranges = plan.ranges()
    assert ranges[0][0] == 0 and ranges[-1][1] == data.size
    for (_, hi), (lo, _) in zip(ranges, ranges[1:]):
        assert hi == lo


def test_partition_unsorted_input_rejected():
    with pytest.raises(ContractError):
        partition_local(np.array([3, 1, 2]), SplitterSet(np.array([2])))


def test_splitterset_unsorted_rejected():
    with pytest.raises(ContractError):
        SplitterSet(np.array([5, 3]))


def test_partition_plan_invariants_enforced():
    with pytest.raises(ContractError):
        PartitionPlan(np.array([0, 5, 3]))
    with pytest.raises(ContractError):
        PartitionPlan(np.array([1, 5]))


# -- end-to-end balance of the sampling + splitter + partition math ---------------


def pipeline_destination_totals(kind, n, p, multiplier, seed):
    """Simulate the sampling/splitter/partition math over equal shards and
    return the per-destination totals (no transport involved)."""
    keys = generate(DistributionSpec(kind=kind, seed=seed), n)
    shards = [np.sort(s) for s in split_evenly(keys, p)]
    cfg = SampleConfig(multiplier=multiplier)
    k = sample_count(p, cfg)
    merged = np.sort(np.concatenate([take_regular_samples(s, k) for s in shards]))
    splitters = select_splitters(merged, p)
    totals = np.zeros(p, dtype=np.int64)
    for shard in shards:
        totals += partition_local(shard, splitters).sizes()
    return totals


@pytest.mark.parametrize("kind", list(DistKind))
@pytest.mark.parametrize("p", [4, 16])
def test_global_balance_statistical(kind, p):
    totals = pipeline_destination_totals(kind, 100_000, p, 1.0, seed=5)
    assert totals.sum() == 100_000
    assert totals.max() / totals.min() <= 1.10
