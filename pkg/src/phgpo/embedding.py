"""Deterministic task-text encoder (signed feature hashing) and cosine similarity.

Tokens are the whitespace-split, lowercased words of the text. Each token is
hashed with 64-bit FNV-1a; bucket = h mod dim, sign = -1 if the top bit of h is
set else +1. The signed count vector is L2-normalised; an all-zero vector
(every token cancelled out) maps to the first basis vector.
"""

from __future__ import annotations

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1

DEFAULT_DIM = 64


def fnv1a_64(text: str) -> int:
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


def tokenize(text: str) -> list:
    return text.lower().split()


def encode(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    if dim <= 0:
        raise ValueError("dim must be positive")
    tokens = tokenize(text)
    if not tokens:
        raise ValueError("empty task text")
    raw = np.zeros(dim)
    for tok in tokens:
        h = fnv1a_64(tok)
        raw[h % dim] += -1.0 if h >> 63 else 1.0
    norm = np.linalg.norm(raw)
    if norm == 0.0:
        raw[0] = 1.0
        return raw
    return raw / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(min(1.0, max(-1.0, float(np.dot(a, b)))))


def simhash_bucket(e: np.ndarray, n_buckets: int, seed: int = 0) -> int:
    """Locality-sensitive bucket of a unit embedding via random hyperplanes.

    Uses ceil(log2(n_buckets)) hyperplanes drawn from a fixed seed, so similar
    texts tend to share a bucket.
    """
    bits = max(1, int(np.ceil(np.log2(n_buckets))))
    planes = _planes(e.shape[0], bits, seed)
    code = 0
    for b, side in enumerate(planes @ e >= 0.0):
        code |= int(side) << b
    return code % n_buckets


_PLANE_CACHE: dict = {}


def _planes(dim: int, bits: int, seed: int) -> np.ndarray:
    key = (dim, bits, seed)
    if key not in _PLANE_CACHE:
        _PLANE_CACHE[key] = np.random.default_rng(seed).standard_normal((bits, dim))
    return _PLANE_CACHE[key]


def task_context(text: str, dim: int = DEFAULT_DIM, n_buckets: int = 32):
    """(embedding, policy bucket) for a task text."""
    e = encode(text, dim)
    return e, simhash_bucket(e, n_buckets)
