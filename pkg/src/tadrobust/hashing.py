"""Stable, platform-independent hashing used for seeds and checksums."""

from __future__ import annotations

from pathlib import Path

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


def _fnv1a_py(data: bytes, state: int) -> int:
    h = state
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK64
    return h


try:
    import numba
    import numpy as np

    @numba.njit(cache=True)
    def _fnv1a_nb(arr, state):  # pragma: no cover - compiled
        h = state
        prime = np.uint64(FNV_PRIME)
        for i in range(arr.shape[0]):
            h = (h ^ np.uint64(arr[i])) * prime
        return h

except ImportError:  # pragma: no cover
    _fnv1a_nb = None


def fnv1a_64(data: bytes, state: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a over ``data``; pass ``state`` to continue a running hash."""
    if _fnv1a_nb is None or len(data) < 4096:
        return _fnv1a_py(data, state)
    arr = np.frombuffer(data, dtype=np.uint8)
    return int(_fnv1a_nb(arr, np.uint64(state)))


def file_checksum(path: str | Path, chunk_size: int = 1 << 20) -> str:
    h = FNV_OFFSET
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            h = fnv1a_64(chunk, h)
    return f"{h:016x}"


def stable_hash(*parts: object) -> int:
    """Hash a tuple of ints/strings into a 64-bit integer, stable across runs."""
    h = FNV_OFFSET
    for part in parts:
        h = fnv1a_64(repr(part).encode("utf-8") + b"\x1f", h)
    return h
