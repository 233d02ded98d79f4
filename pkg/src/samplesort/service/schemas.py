"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

from ..datagen import DistributionSpec

DistKindName = Literal["uniform", "normal", "right_skewed", "exponential", "duplicated"]


class DistributionModel(BaseModel):
    kind: DistKindName = "uniform"
    seed: int = 0
    low: int = 0
    high: int = 2**32
    mean: float = float(2**31)
    stddev: float = float(2**28)
    median: float = float(2**24)
    sigma: float = 1.0
    scale: float = float(2**28)
    fraction: float = Field(default=0.9, ge=0.0, le=1.0)
    distinct: int = Field(default=4096, ge=1)

    def to_spec(self) -> DistributionSpec:
        return DistributionSpec(**self.model_dump())


class SortRequest(BaseModel):
    dist: DistributionModel = Field(default_factory=DistributionModel)
    n: int = Field(default=100_000, ge=0)
    p: int = Field(default=4, ge=1)
    threads: int = Field(default=1, ge=1)
    multiplier: float = Field(default=1.0, gt=0.0)
    backend: Literal["inproc", "tcp"] = "inproc"
    reps: int = Field(default=1, ge=1)
    retain: bool = False  # keep the sorted dataset in memory for queries


class BalanceModel(BaseModel):
    counts: list[int]
    shares: list[float]
    min_share: float
    max_share: float
    ratio: float | None  # None when a worker ended up empty
    key_ranges: list[tuple[int, int] | None]


class SortResponse(BaseModel):
    run_id: str
    dataset_id: str | None = None
    n: int
    p: int
    phase_seconds: dict[str, float]
    baseline_seconds: float
    balance: BalanceModel
    verified: bool
    failures: list[str]


class SweepRequest(BaseModel):
    run: SortRequest = Field(default_factory=SortRequest)
    multipliers: list[float] = Field(min_length=1)


class SweepRowModel(BaseModel):
    multiplier: float
    load_ratio: float | None
    sample_bytes: int
    exchange_seconds: float
    total_seconds: float
    verified: bool


class SweepResponse(BaseModel):
    run_id: str
    rows: list[SweepRowModel]


class MemoryRowModel(BaseModel):
    worker: int
    payload_bytes: int
    peak_aux_bytes: int
    aux_over_payload: float


class MemoryResponse(BaseModel):
    run_id: str
    rows: list[MemoryRowModel]


class GenerateRequest(BaseModel):
    dist: DistributionModel = Field(default_factory=DistributionModel)
    n: int = Field(default=1000, ge=0)


class DatasetInfo(BaseModel):
    dataset_id: str
    run_id: str
    n: int
    p: int
    distribution: DistKindName
    created_at: float


class FindResponse(BaseModel):
    found: bool
    worker: int | None = None
    index: int | None = None
    key: int | None = None


class OriginResponse(BaseModel):
    origin_worker: int
    origin_index: int
    key: int
