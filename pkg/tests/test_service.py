import numpy as np
import pytest
from fastapi.testclient import TestClient

from samplesort.datagen import DistKind, DistributionSpec, generate, split_evenly
from samplesort.orchestrator import ClusterConfig, distributed_sort, global_find, origin_of
from samplesort.service import create_app


@pytest.fixture
def client():
    with TestClient(create_app()) as c:
        yield c


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"


def test_sort_endpoint_reports_and_verifies(client):
    resp = client.post("/sort", json={
        "dist": {"kind": "uniform", "seed": 3},
        "n": 30_000, "p": 4,
    })
    assert resp.status_code == 200
    body = resp.json()
    assert body["verified"] is True
    assert body["dataset_id"] is None
    assert sum(body["balance"]["counts"]) == 30_000
    assert set(body["phase_seconds"]) == {
        "local_sort", "sampling", "splitter_selection", "partitioning",
        "exchange", "final_merge",
    }


def test_retained_dataset_queries_match_library(client):
    req = {"dist": {"kind": "duplicated", "seed": 6, "fraction": 0.5, "distinct": 64},
           "n": 10_000, "p": 4, "retain": True}
    body = client.post("/sort", json=req).json()
    ds = body["dataset_id"]
    assert ds

    # library oracle: rerun the same deterministic sort
    spec = DistributionSpec(kind=DistKind.DUPLICATED, seed=6, fraction=0.5, distinct=64)
    keys = generate(spec, 10_000)
    parts, _ = distributed_sort(ClusterConfig(p=4), split_evenly(keys, 4))

    for probe in (0, 12345, 10**12):
        got = client.get(f"/datasets/{ds}/find", params={"key": probe}).json()
        expected = global_find(parts, probe)
        if expected is None:
            assert got == {"found": False, "worker": None, "index": None, "key": None}
        else:
            assert (got["worker"], got["index"]) == expected

    got = client.get(f"/datasets/{ds}/origin", params={"worker": 2, "index": 5}).json()
    assert (got["origin_worker"], got["origin_index"]) == origin_of(parts, 2, 5)

    infos = client.get("/datasets").json()
    assert any(i["dataset_id"] == ds for i in infos)
    assert client.get(f"/datasets/{ds}").json()["n"] == 10_000
    assert client.delete(f"/datasets/{ds}").json() == {"deleted": ds}
    assert client.get(f"/datasets/{ds}").status_code == 404


def test_origin_out_of_range_is_422(client):
    body = client.post("/sort", json={"dist": {"kind": "uniform"}, "n": 100, "p": 2,
                                      "retain": True}).json()
    resp = client.get(f"/datasets/{body['dataset_id']}/origin",
                      params={"worker": 0, "index": 99999})
    assert resp.status_code == 422


def test_unknown_dataset_404(client):
    assert client.get("/datasets/nope/find", params={"key": 1}).status_code == 404
    assert client.delete("/datasets/nope").status_code == 404


def test_validation_error_422(client):
    resp = client.post("/sort", json={"dist": {"kind": "uniform"}, "n": -5})
    assert resp.status_code == 422


def test_pipeline_error_maps_to_400(client):
    # 2 records over 8 workers cannot produce 7 splitters
    resp = client.post("/sort", json={"dist": {"kind": "uniform"}, "n": 2, "p": 8})
    assert resp.status_code == 400
    assert "sample" in resp.json()["detail"]


def test_sweep_endpoint(client):
    resp = client.post("/sweep", json={
        "run": {"dist": {"kind": "right_skewed", "seed": 2}, "n": 50_000, "p": 4},
        "multipliers": [0.004, 1.0],
    })
    assert resp.status_code == 200
    rows = resp.json()["rows"]
    assert len(rows) == 2
    assert rows[0]["multiplier"] == 0.004
    assert rows[0]["sample_bytes"] < rows[1]["sample_bytes"]


def test_memory_endpoint(client):
    resp = client.post("/memory", json={"dist": {"kind": "uniform"}, "n": 20_000, "p": 2})
    rows = resp.json()["rows"]
    assert len(rows) == 2
    assert all(r["peak_aux_bytes"] <= 2.5 * r["payload_bytes"] for r in rows)


def test_generate_endpoint_matches_library(client):
    resp = client.post("/generate", json={"dist": {"kind": "normal", "seed": 44}, "n": 500})
    assert resp.headers["content-type"] == "application/octet-stream"
    expected = generate(DistributionSpec(kind=DistKind.NORMAL, seed=44), 500)
    assert resp.content == expected.tobytes()
    assert np.array_equal(np.frombuffer(resp.content, dtype=np.int64), expected)
