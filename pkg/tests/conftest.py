import threading

import numpy as np
import pytest


def run_collective(transports, fn):
    """Run fn(worker_id, transport) on one thread per worker; return results.

    The first worker exception is re-raised after all threads finish (the
    cluster is aborted first so blocked peers unwind).
    """
    results = [None] * len(transports)
    errors = []

    def _body(w):
        try:
            results[w] = fn(w, transports[w])
        except BaseException as exc:
            errors.append(exc)
            for t in transports:
                t.abort(f"worker {w} failed: {exc}")

    threads = [threading.Thread(target=_body, args=(w,)) for w in range(len(transports))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return results


def reference_shuffle(counts, outgoing_by_worker):
    """Single-threaded oracle for the exchange: per-receiver concatenation
    of every sender's range in worker order."""
    p = len(outgoing_by_worker)
    counts = np.asarray(counts)
    regions = []
    for dest in range(p):
        parts = [outgoing_by_worker[src][dest] for src in range(p)]
        assert all(parts[src].size == counts[src, dest] for src in range(p))
        regions.append(np.concatenate(parts))
    return regions


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
