"""Load-balanced distributed sample sort.

Library entry points: :func:`distributed_sort`, :func:`global_find`,
:func:`origin_of`, :func:`multi_sort`, plus the benchmark harness in
:mod:`samplesort.bench`, the HTTP service in :mod:`samplesort.service`, and
the CLI in :mod:`samplesort.cli`.
"""

from .datagen import DistKind, DistributionSpec, generate
from .errors import (
    ContractError,
    InsufficientSamplesError,
    ParameterError,
    ProtocolError,
    SampleSortError,
    TransportError,
)
from .local_sort import MergeSchedule, merge_runs, merge_schedule, parallel_local_sort
from .orchestrator import (
    ClusterConfig,
    Record,
    SortReport,
    SortedPartition,
    distributed_sort,
    global_find,
    multi_sort,
    origin_of,
)
from .partition import (
    PartitionPlan,
    SampleConfig,
    SplitterSet,
    partition_local,
    sample_count,
    select_splitters,
    take_regular_samples,
)

__version__ = "0.1.0"

__all__ = [
    "ClusterConfig",
    "ContractError",
    "DistKind",
    "DistributionSpec",
    "InsufficientSamplesError",
    "MergeSchedule",
    "ParameterError",
    "PartitionPlan",
    "ProtocolError",
    "Record",
    "SampleConfig",
    "SampleSortError",
    "SortReport",
    "SortedPartition",
    "SplitterSet",
    "TransportError",
    "distributed_sort",
    "generate",
    "global_find",
    "merge_runs",
    "merge_schedule",
    "multi_sort",
    "origin_of",
    "parallel_local_sort",
    "partition_local",
    "sample_count",
    "select_splitters",
    "take_regular_samples",
]
