"""Dense float64 reference implementations.

Deliberately independent of `kittensim.tiles` and `kittensim.lcsf`: plain
loops and numpy only, no tiling, no online softmax, no base-2 exponentials.
"""

from __future__ import annotations

import math

import numpy as np


def oracle_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise ValueError(f"inner dims differ: {k} vs {k2}")
    c = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for kk in range(k):
            c[i, :] += a[i, kk] * b[kk, :]
    return c


def _attention_2d(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    d = q.shape[-1]
    out = np.empty((q.shape[0], v.shape[1]), dtype=np.float64)
    scale = 1.0 / math.sqrt(d)
    for i in range(q.shape[0]):
        scores = (k @ q[i]) * scale
        w = np.exp(scores - scores.max())
        out[i] = (w / w.sum()) @ v
    return out


def oracle_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """softmax(Q K^T / sqrt(D)) V over the last two axes; leading axes are batch."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim == 2:
        return _attention_2d(q, k, v)
    lead = q.shape[:-2]
    out = np.empty(lead + (q.shape[-2], v.shape[-1]), dtype=np.float64)
    for idx in np.ndindex(*lead):
        out[idx] = _attention_2d(q[idx], k[idx], v[idx])
    return out


def oracle_rotary(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate (x1[i], x2[i]) pairs, x1/x2 the two halves of the last axis, as
    complex multiplication (x1 + i x2) * (cos + i sin). cos/sin are (seq, d/2)."""
    x = np.asarray(x, dtype=np.float64)
    half = x.shape[-1] // 2
    if x.shape[-1] % 2:
        raise ValueError("head dim must be even")
    z = x[..., :half] + 1j * x[..., half:]
    rot = np.asarray(cos, dtype=np.float64) + 1j * np.asarray(sin, dtype=np.float64)
    out = z * rot
    return np.concatenate([out.real, out.imag], axis=-1)
