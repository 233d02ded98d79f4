"""Explicit byte accounting for transient pipeline allocations.

Every sizable scratch buffer the sort pipeline allocates is registered here so
peak auxiliary memory can be reported deterministically, without sampling the
process RSS.
"""

from __future__ import annotations

import threading
import time
from contextlib import contextmanager


class MemoryMeter:
    """Thread-safe running total and peak of registered allocations."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    def alloc(self, nbytes: int) -> None:
        with self._lock:
            self.current += int(nbytes)
            if self.current > self.peak:
                self.peak = self.current

    def free(self, nbytes: int) -> None:
        with self._lock:
            self.current -= int(nbytes)

    @contextmanager
    def scoped(self, nbytes: int):
        self.alloc(nbytes)
        try:
            yield
        finally:
            self.free(nbytes)


class PhaseTimer:
    """Accumulates wall-clock seconds per named phase."""

    def __init__(self, phases: tuple[str, ...] = ()) -> None:
        self.seconds: dict[str, float] = {name: 0.0 for name in phases}
        self.active: str | None = None

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        self.active = name
        try:
            yield
            self.active = None  # stays set on failure so the step can be named
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - start
