"""Exact Euclidean distance transform (Felzenszwalb-Huttenlocher, two passes).

Distances are returned squared as integers, so their square roots agree bit
for bit with ``sqrt(dx*dx + dy*dy)`` computed directly.
"""

from __future__ import annotations

import math

import numpy as np

_INF = math.inf


def _column_pass(features: np.ndarray) -> np.ndarray:
    """Per column, distance to the nearest feature pixel in that column (-1: none)."""
    h, w = features.shape
    big = h + w + 1
    down = np.full(w, big, np.int64)
    d = np.empty((h, w), np.int64)
    for y in range(h):
        down = np.where(features[y], 0, down + 1)
        d[y] = down
    up = np.full(w, big, np.int64)
    for y in range(h - 1, -1, -1):
        up = np.where(features[y], 0, up + 1)
        d[y] = np.minimum(d[y], up)
    return np.where(d >= big, -1, d)


def _envelope_row(f: list) -> list:
    """``d[q] = min_p (q - p)^2 + f[p]`` over finite ``f[p]`` via the lower envelope of parabolas."""
    v: list[int] = []
    z: list[float] = []
    for q, fq in enumerate(f):
        if fq is None:
            continue
        while v:
            p = v[-1]
            s = ((fq + q * q) - (f[p] + p * p)) / (2 * (q - p))
            if s <= z[-1]:
                v.pop()
                z.pop()
            else:
                z_new = s
                break
        else:
            z_new = -_INF
        v.append(q)
        z.append(z_new)
    if not v:
        return [None] * len(f)
    out = []
    k = 0
    for q in range(len(f)):
        while k + 1 < len(v) and z[k + 1] < q:
            k += 1
        p = v[k]
        out.append((q - p) * (q - p) + f[p])
    return out


def squared_edt(features: np.ndarray) -> np.ndarray:
    """Squared distance from every pixel to the nearest ``True`` pixel.

    Returns an int64 array; pixels are ``-1`` only if there are no features.
    """
    features = np.asarray(features, bool)
    if features.ndim != 2:
        raise ValueError("squared_edt expects a 2-d mask")
    g = _column_pass(features)
    out = np.empty(features.shape, np.int64)
    for y in range(features.shape[0]):
        row = [None if v < 0 else v * v for v in g[y].tolist()]
        res = _envelope_row(row)
        out[y] = [-1 if r is None else r for r in res]
    return out


def edt(features: np.ndarray) -> np.ndarray:
    """Euclidean distance to the nearest feature pixel, as float64."""
    sq = squared_edt(features)
    return np.where(sq < 0, np.inf, np.sqrt(np.maximum(sq, 0).astype(np.float64)))
