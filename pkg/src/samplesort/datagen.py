"""Synthetic key-stream generators.

Five stream shapes are supported: uniform, normal, right-skewed (log-normal),
exponential, and a heavy-duplicate stream driven by a small distinct-key pool.
Generation is fully deterministic in (spec, n): the counter-based Philox
bit generator is used so identical inputs give byte-identical outputs on any
platform.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError

KEY_DTYPE = np.dtype("<i8")

# Largest float64 that still casts into int64 without overflow.
_I64_LO = float(np.iinfo(np.int64).min)
_I64_HI = float(np.iinfo(np.int64).max - 1024)


class DistKind(str, enum.Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"
    RIGHT_SKEWED = "right_skewed"
    EXPONENTIAL = "exponential"
    DUPLICATED = "duplicated"


@dataclass(frozen=True)
class DistributionSpec:
    """Shape, parameters and seed of one synthetic key stream.

    Only the parameters matching ``kind`` are consulted:

    * uniform: integer keys in [low, high)
    * normal: mean/stddev, floored and clamped to the int64 key domain
    * right_skewed: log-normal with the given median and log-space sigma
    * exponential: scale is the distribution mean (1/rate), floored
    * duplicated: at least ceil(fraction*n) keys come from a pool of
      ``distinct`` keys, the rest are uniform background noise
    """

    kind: DistKind
    seed: int = 0
    low: int = 0
    high: int = 2**32
    mean: float = float(2**31)
    stddev: float = float(2**28)
    median: float = float(2**24)
    sigma: float = 1.0
    scale: float = float(2**28)
    fraction: float = 0.9
    distinct: int = 4096

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DistKind(self.kind))
        if self.kind is DistKind.UNIFORM and self.low >= self.high:
            raise ParameterError(f"low must be < high, got low={self.low} high={self.high}")
        if self.kind is DistKind.NORMAL and self.stddev <= 0:
            raise ParameterError(f"stddev must be > 0, got {self.stddev}")
        if self.kind is DistKind.RIGHT_SKEWED:
            if self.median <= 0:
                raise ParameterError(f"median must be > 0, got {self.median}")
            if self.sigma <= 0:
                raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.kind is DistKind.EXPONENTIAL and self.scale <= 0:
            raise ParameterError(f"scale must be > 0, got {self.scale}")
        if self.kind is DistKind.DUPLICATED:
            if not 0.0 <= self.fraction <= 1.0:
                raise ParameterError(f"fraction must be in [0, 1], got {self.fraction}")
            if self.distinct < 1:
                raise ParameterError(f"distinct must be >= 1, got {self.distinct}")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed & (2**64 - 1)))


def _to_keys(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values), _I64_LO, _I64_HI).astype(KEY_DTYPE)


def generate(spec: DistributionSpec, n: int) -> np.ndarray:
    """Return exactly ``n`` int64 keys drawn from ``spec``.

    Deterministic in (spec, n); two calls with equal arguments return
    byte-identical arrays.
    """
    if n < 0:
        raise ParameterError(f"n must be >= 0, got {n}")
    rng = _rng(spec.seed)
    if n == 0:
        return np.empty(0, dtype=KEY_DTYPE)

    if spec.kind is DistKind.UNIFORM:
        return rng.integers(spec.low, spec.high, size=n, dtype=np.int64)
    if spec.kind is DistKind.NORMAL:
        return _to_keys(rng.normal(spec.mean, spec.stddev, size=n))
    if spec.kind is DistKind.RIGHT_SKEWED:
        return _to_keys(spec.median * rng.lognormal(0.0, spec.sigma, size=n))
    if spec.kind is DistKind.EXPONENTIAL:
        return _to_keys(rng.exponential(spec.scale, size=n))

    # Duplicated: pick the pool, then overwrite an exact quota of positions
    # chosen without replacement so the paper-style stress case is guaranteed
    # even for tiny n.
    pool = rng.integers(0, 2**32, size=spec.distinct, dtype=np.int64)
    keys = rng.integers(0, 2**32, size=n, dtype=np.int64)
    quota = math.ceil(spec.fraction * n)
    if quota > 0:
        positions = rng.permutation(n)[:quota]
        keys[positions] = pool[rng.integers(0, spec.distinct, size=quota)]
    return keys


def split_evenly(keys: np.ndarray, parts: int) -> list[np.ndarray]:
    """Slice a key stream into ``parts`` near-equal shards (sizes differ <= 1)."""
    if parts < 1:
        raise ParameterError(f"parts must be >= 1, got {parts}")
    return np.array_split(keys, parts)


def write_keys(path: Path | str, keys: np.ndarray, text: bool = False) -> None:
    """Write keys to a file: little-endian 8-byte binary, or one decimal per line."""
    path = Path(path)
    if text:
        with path.open("w") as fh:
            fh.writelines(f"{int(k)}\n" for k in keys)
    else:
        np.ascontiguousarray(keys, dtype=KEY_DTYPE).tofile(path)


def read_keys(path: Path | str, text: bool = False) -> np.ndarray:
    """Read a key file written by :func:`write_keys`."""
    path = Path(path)
    if text:
        with path.open() as fh:
            return np.array([int(line) for line in fh if line.strip()], dtype=KEY_DTYPE)
    return np.fromfile(path, dtype=KEY_DTYPE)
