"""FastAPI service wrapping the sort engine.

Sorting, sweeps, memory reports, and data generation run server-side; a sort
submitted with ``retain=true`` stays in memory under a dataset id so clients
can run lower-bound and provenance queries against the sorted partitions.
"""

from __future__ import annotations

import math
import threading
import time
import uuid
from dataclasses import dataclass

from fastapi import FastAPI, HTTPException, Response
from fastapi.responses import JSONResponse

from .. import __version__, bench
from ..errors import SampleSortError
from ..datagen import generate
from ..orchestrator import SortedPartition, global_find, origin_of
from .schemas import (
    BalanceModel,
    DatasetInfo,
    FindResponse,
    GenerateRequest,
    MemoryResponse,
    MemoryRowModel,
    OriginResponse,
    SortRequest,
    SortResponse,
    SweepRequest,
    SweepResponse,
    SweepRowModel,
)


@dataclass
class _StoredDataset:
    info: DatasetInfo
    partitions: list[SortedPartition]


class DatasetRegistry:
    """In-memory store of retained sorted datasets."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._datasets: dict[str, _StoredDataset] = {}

    def put(self, info: DatasetInfo, partitions: list[SortedPartition]) -> None:
        with self._lock:
            self._datasets[info.dataset_id] = _StoredDataset(info, partitions)

    def get(self, dataset_id: str) -> _StoredDataset:
        with self._lock:
            stored = self._datasets.get(dataset_id)
        if stored is None:
            raise HTTPException(status_code=404, detail=f"no dataset {dataset_id!r}")
        return stored

    def drop(self, dataset_id: str) -> None:
        with self._lock:
            if dataset_id not in self._datasets:
                raise HTTPException(status_code=404, detail=f"no dataset {dataset_id!r}")
            del self._datasets[dataset_id]

    def list(self) -> list[DatasetInfo]:
        with self._lock:
            return [stored.info for stored in self._datasets.values()]


def _run_spec(req: SortRequest) -> bench.RunSpec:
    return bench.RunSpec(
        dist=req.dist.to_spec(),
        n=req.n,
        p=req.p,
        threads=req.threads,
        multiplier=req.multiplier,
        backend=req.backend,
        reps=req.reps,
    )


def _balance_model(balance: bench.BalanceReport) -> BalanceModel:
    return BalanceModel(
        counts=balance.counts,
        shares=balance.shares,
        min_share=balance.min_share,
        max_share=balance.max_share,
        ratio=None if math.isinf(balance.ratio) else balance.ratio,
        key_ranges=[tuple(r) if r is not None else None for r in balance.key_ranges],
    )


def create_app() -> FastAPI:
    app = FastAPI(title="samplesort", version=__version__)
    registry = DatasetRegistry()
    app.state.registry = registry

    @app.exception_handler(SampleSortError)
    def _sort_error(_, exc: SampleSortError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/sort", response_model=SortResponse)
    def sort(req: SortRequest) -> SortResponse:
        spec = _run_spec(req)
        result = bench.run_benchmark(spec)
        dataset_id = None
        if req.retain:
            dataset_id = uuid.uuid4().hex[:12]
            registry.put(
                DatasetInfo(
                    dataset_id=dataset_id,
                    run_id=result.run_id,
                    n=req.n,
                    p=req.p,
                    distribution=req.dist.kind,
                    created_at=time.time(),
                ),
                result.partitions,
            )
        return SortResponse(
            run_id=result.run_id,
            dataset_id=dataset_id,
            n=req.n,
            p=req.p,
            phase_seconds=result.report.phase_seconds,
            baseline_seconds=result.baseline_seconds,
            balance=_balance_model(result.balance),
            verified=result.verified,
            failures=result.failures,
        )

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest) -> SweepResponse:
        spec = _run_spec(req.run)
        rows = bench.sweep_multiplier(spec, req.multipliers)
        return SweepResponse(
            run_id=spec.run_id,
            rows=[
                SweepRowModel(
                    multiplier=r.multiplier,
                    load_ratio=None if math.isinf(r.ratio) else r.ratio,
                    sample_bytes=r.sample_bytes,
                    exchange_seconds=r.exchange_seconds,
                    total_seconds=r.total_seconds,
                    verified=r.verified,
                )
                for r in rows
            ],
        )

    @app.post("/memory", response_model=MemoryResponse)
    def memory(req: SortRequest) -> MemoryResponse:
        spec = _run_spec(req)
        rows = bench.report_memory(spec)
        return MemoryResponse(
            run_id=spec.run_id,
            rows=[
                MemoryRowModel(
                    worker=r.worker,
                    payload_bytes=r.payload_bytes,
                    peak_aux_bytes=r.peak_aux_bytes,
                    aux_over_payload=r.aux_over_payload,
                )
                for r in rows
            ],
        )

    @app.post("/generate")
    def generate_keys(req: GenerateRequest) -> Response:
        keys = generate(req.dist.to_spec(), req.n)
        return Response(content=keys.tobytes(), media_type="application/octet-stream")

    @app.get("/datasets", response_model=list[DatasetInfo])
    def list_datasets() -> list[DatasetInfo]:
        return registry.list()

    @app.get("/datasets/{dataset_id}", response_model=DatasetInfo)
    def dataset_info(dataset_id: str) -> DatasetInfo:
        return registry.get(dataset_id).info

    @app.delete("/datasets/{dataset_id}")
    def drop_dataset(dataset_id: str) -> dict:
        registry.drop(dataset_id)
        return {"deleted": dataset_id}

    @app.get("/datasets/{dataset_id}/find", response_model=FindResponse)
    def find(dataset_id: str, key: int) -> FindResponse:
        partitions = registry.get(dataset_id).partitions
        try:
            hit = global_find(partitions, key)
        except OverflowError as exc:  # key outside the int64 domain
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        if hit is None:
            return FindResponse(found=False)
        worker, index = hit
        return FindResponse(
            found=True,
            worker=worker,
            index=index,
            key=int(partitions[worker].keys[index]),
        )

    @app.get("/datasets/{dataset_id}/origin", response_model=OriginResponse)
    def origin(dataset_id: str, worker: int, index: int) -> OriginResponse:
        partitions = registry.get(dataset_id).partitions
        try:
            ow, oi = origin_of(partitions, worker, index)
        except IndexError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return OriginResponse(
            origin_worker=ow,
            origin_index=oi,
            key=int(partitions[worker].keys[index]),
        )

    return app


app = create_app()
