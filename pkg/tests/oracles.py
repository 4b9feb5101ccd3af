"""Slow, obviously-correct reference implementations used by the tests.

Everything here is written with plain Python loops, sets and Fractions and
shares no code with the package.
"""

from __future__ import annotations

import math
from collections import deque
from fractions import Fraction

import numpy as np

N4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
N8 = N4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def bfs_labels(mask, connectivity=8):
    mask = np.asarray(mask, bool)
    h, w = mask.shape
    out = np.zeros((h, w), np.int64)
    nbrs = N8 if connectivity == 8 else N4
    k = 0
    for r in range(h):
        for c in range(w):
            if mask[r, c] and not out[r, c]:
                k += 1
                out[r, c] = k
                q = deque([(r, c)])
                while q:
                    y, x = q.popleft()
                    for dy, dx in nbrs:
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not out[yy, xx]:
                            out[yy, xx] = k
                            q.append((yy, xx))
    return out


def same_partition(a, b):
    """True when two label maps describe the same objects up to renumbering."""
    a, b = np.asarray(a), np.asarray(b)
    if not np.array_equal(a > 0, b > 0):
        return False
    pairs = set(zip(a[a > 0].tolist(), b[b > 0].tolist()))
    return len(pairs) == len({p[0] for p in pairs}) == len({p[1] for p in pairs})


def otsu_exhaustive(hist):
    """argmax_t w0 w1 (mu0 - mu1)^2 over t with both classes non-empty; smallest t on ties."""
    hist = [int(v) for v in hist]
    n = sum(hist)
    total = sum(i * v for i, v in enumerate(hist))
    best_t, best = -1, None
    n0 = s0 = 0
    for t in range(len(hist) - 1):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        mu0 = Fraction(s0, n0)
        mu1 = Fraction(total - s0, n1)
        var = Fraction(n0, n) * Fraction(n1, n) * (mu0 - mu1) ** 2
        if best is None or var > best:
            best_t, best = t, var
    return best_t


def disk_offsets(r):
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r]


def dilate(mask, r):
    mask = np.asarray(mask, bool)
    h, w = mask.shape
    out = np.zeros_like(mask)
    offs = disk_offsets(r)
    for y in range(h):
        for x in range(w):
            out[y, x] = any(0 <= y + dy < h and 0 <= x + dx < w and mask[y + dy, x + dx] for dy, dx in offs)
    return out


def erode(mask, r):
    mask = np.asarray(mask, bool)
    h, w = mask.shape
    out = np.zeros_like(mask)
    offs = disk_offsets(r)
    for y in range(h):
        for x in range(w):
            out[y, x] = all(0 <= y + dy < h and 0 <= x + dx < w and mask[y + dy, x + dx] for dy, dx in offs)
    return out


def fill_holes(mask):
    """Background pixels not 4-connected to the border become foreground."""
    mask = np.asarray(mask, bool)
    h, w = mask.shape
    outside = np.zeros_like(mask)
    q = deque()
    for y in range(h):
        for x in range(w):
            if (y in (0, h - 1) or x in (0, w - 1)) and not mask[y, x]:
                outside[y, x] = True
                q.append((y, x))
    while q:
        y, x = q.popleft()
        for dy, dx in N4:
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w and not mask[yy, xx] and not outside[yy, xx]:
                outside[yy, xx] = True
                q.append((yy, xx))
    return ~outside


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def objects(labels):
    labels = np.asarray(labels)
    objs = {}
    for (y, x), v in np.ndenumerate(labels):
        if v:
            objs.setdefault(int(v), set()).add((y, x))
    return [objs[k] for k in sorted(objs)]


def pairwise_hausdorff(a, b):
    a = np.array(sorted(a), np.int64)
    b = np.array(sorted(b), np.int64)
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return math.sqrt(max(int(d2.min(1).max()), int(d2.min(0).max())))


def _best_partner(obj, others):
    best, best_j = 0, -1
    for j, o in enumerate(others):
        ov = len(obj & o)
        if ov > best:
            best, best_j = ov, j
    return best_j, best


def object_dice(gt, seg):
    g, s = objects(gt), objects(seg)
    if not g and not s:
        return 1.0

    def one_way(src, dst):
        total_px = sum(len(o) for o in src)
        acc = 0.0
        for o in src:
            j, ov = _best_partner(o, dst)
            if j >= 0:
                acc += len(o) / total_px * 2 * ov / (len(o) + len(dst[j]))
        return acc

    return 0.5 * ((one_way(s, g) if s else 0.0) + (one_way(g, s) if g else 0.0))


def object_hausdorff(gt, seg):
    g, s = objects(gt), objects(seg)
    h, w = np.shape(gt)
    diag = math.hypot(h, w)

    def one_way(src, dst):
        if not src:
            return 0.0
        total_px = sum(len(o) for o in src)
        everything = set().union(*dst) if dst else set()
        acc = 0.0
        for o in src:
            j, _ = _best_partner(o, dst)
            if j >= 0:
                d = pairwise_hausdorff(o, dst[j])
            elif everything:
                d = pairwise_hausdorff(o, everything)
            else:
                d = diag
            acc += len(o) / total_px * d
        return acc

    return 0.5 * (one_way(s, g) + one_way(g, s))


def f1(gt, seg, frac=0.5):
    g, s = objects(gt), objects(seg)
    if not g and not s:
        return 1.0
    free_g, free_s = set(range(len(g))), set(range(len(s)))
    tp = 0
    while True:
        best = None
        for i in sorted(free_s):
            for j in sorted(free_g):
                ov = len(s[i] & g[j])
                if ov > frac * len(g[j]) and (best is None or ov > best[0]):
                    best = (ov, i, j)
        if best is None:
            break
        free_s.discard(best[1])
        free_g.discard(best[2])
        tp += 1
    fp, fn = len(s) - tp, len(g) - tp
    if tp == 0:
        return 0.0
    p, r = tp / (tp + fp), tp / (tp + fn)
    return 2 * p * r / (p + r)


def random_label_map(rng, shape=(32, 32), max_objects=6):
    """Overlapping random ellipses and rectangles; some labels may be split or vanish."""
    h, w = shape
    out = np.zeros(shape, np.int32)
    yy, xx = np.mgrid[:h, :w]
    for k in range(1, int(rng.integers(0, max_objects + 1)) + 1):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ay, ax = rng.uniform(1, h / 3), rng.uniform(1, w / 3)
        if rng.random() < 0.5:
            m = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1
        else:
            m = (np.abs(yy - cy) <= ay) & (np.abs(xx - cx) <= ax)
        out[m] = k
    return out
