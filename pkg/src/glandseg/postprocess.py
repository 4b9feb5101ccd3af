"""Probability map -> labeled gland map.

Stages, in fixed order: bilinear resize to the original size, Otsu
threshold, opening with a disk, hole filling, small-object removal,
connected-component labeling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import resize_bilinear


@dataclass(frozen=True)
class PostprocessParams:
    radius: int = 2
    min_area: int = 100
    connectivity: int = 8

    def __post_init__(self) -> None:
        if self.radius < 0 or self.min_area < 0:
            raise ValueError("radius and min_area must be non-negative")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")


# ---------------------------------------------------------------------------
# Otsu
# ---------------------------------------------------------------------------

def quantize(prob: np.ndarray) -> np.ndarray:
    """Map [0, 1] probabilities to 256 integer bins by rounding ``v * 255``."""
    return np.clip(np.floor(np.asarray(prob, np.float64) * 255 + 0.5), 0, 255).astype(np.int64)


def otsu_bin(hist: np.ndarray) -> int:
    """Threshold bin maximizing between-class variance; class 0 is ``bin <= t``.

    Variances are compared exactly as rationals
    ``(s0*N - S*n0)^2 / (n0*n1)``; ties go to the smallest ``t``.  Returns
    -1 when the histogram has fewer than two occupied bins.
    """
    hist = [int(v) for v in hist]
    n_total = sum(hist)
    s_total = sum(i * v for i, v in enumerate(hist))
    best_t, best_num, best_den = -1, 0, 1
    n0 = s0 = 0
    for t in range(len(hist) - 1):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = n_total - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (s0 * n_total - s_total * n0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def otsu_threshold(prob: np.ndarray) -> tuple[float, np.ndarray]:
    """Otsu threshold of a probability map.

    Returns ``(threshold, mask)`` where the threshold is in probability units
    (bin / 255) and the mask holds pixels whose bin exceeds it.  A map with a
    single occupied bin (e.g. constant) yields an empty mask.
    """
    bins = quantize(prob)
    t = otsu_bin(np.bincount(bins.ravel(), minlength=256))
    if t < 0:
        top = int(bins.max()) if bins.size else 255
        return top / 255.0, np.zeros(bins.shape, bool)
    return t / 255.0, bins > t


# ---------------------------------------------------------------------------
# Morphology
# ---------------------------------------------------------------------------

def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy ** 2 + xx ** 2) <= r * r


def _shifted(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """``out[y, x] = mask[y + dy, x + dx]``, background outside the image."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    ys, yd = slice(max(dy, 0), h + min(dy, 0)), slice(max(-dy, 0), h + min(-dy, 0))
    xs, xd = slice(max(dx, 0), w + min(dx, 0)), slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] = mask[ys, xs]
    return out


def _offsets(radius: int) -> list[tuple[int, int]]:
    se = disk(radius)
    r = int(radius)
    return [(int(y) - r, int(x) - r) for y, x in zip(*np.nonzero(se))]


def morph_dilate(mask: np.ndarray, radius: int = 2) -> np.ndarray:
    mask = np.asarray(mask, bool)
    out = np.zeros_like(mask)
    for dy, dx in _offsets(radius):
        out |= _shifted(mask, dy, dx)
    return out


def morph_erode(mask: np.ndarray, radius: int = 2) -> np.ndarray:
    """Erosion treating everything outside the image as background."""
    mask = np.asarray(mask, bool)
    out = np.ones_like(mask)
    for dy, dx in _offsets(radius):
        out &= _shifted(mask, dy, dx)
    return out


def morph_open(mask: np.ndarray, radius: int = 2) -> np.ndarray:
    return morph_dilate(morph_erode(mask, radius), radius)


def morph_close(mask: np.ndarray, radius: int = 2) -> np.ndarray:
    """Closing on the unbounded plane, cropped back to the image.

    Dilation may grow past the border; keeping that margin before eroding
    makes the result a superset of the input even at the image edge.
    """
    mask = np.asarray(mask, bool)
    r = int(radius)
    padded = np.pad(mask, r)
    closed = morph_erode(morph_dilate(padded, r), r)
    return closed[r:r + mask.shape[0], r:r + mask.shape[1]]


# ---------------------------------------------------------------------------
# Connected components
# ---------------------------------------------------------------------------

def _runs(row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.concatenate(([False], row, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return edges[0::2], edges[1::2]


def _find(parent: list[int], i: int) -> int:
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def connected_components(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Label foreground components 1..K in row-major order of first pixel.

    Two passes over horizontal runs: runs on adjacent rows that touch are
    unioned, then runs are painted with their compacted root label.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask, bool)
    h = mask.shape[0]
    labels = np.zeros(mask.shape, np.int32)
    if not mask.any():
        return labels
    reach = 1 if connectivity == 8 else 0
    run_row, run_start, run_end = [], [], []
    parent: list[int] = []
    prev_ids: list[int] = []
    prev_s = prev_e = np.empty(0, int)
    for y in range(h):
        starts, ends = _runs(mask[y])
        ids = []
        j = 0
        for s, e in zip(starts.tolist(), ends.tolist()):
            rid = len(parent)
            parent.append(rid)
            run_row.append(y)
            run_start.append(s)
            run_end.append(e)
            ids.append(rid)
            # previous-row runs [ps, pe) touching [s, e)
            while j < len(prev_ids) and prev_e[j] + reach <= s:
                j += 1
            k = j
            while k < len(prev_ids) and prev_s[k] < e + reach:
                ra, rb = _find(parent, rid), _find(parent, prev_ids[k])
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
                k += 1
        prev_ids, prev_s, prev_e = ids, starts, ends
    compact: dict[int, int] = {}
    for rid in range(len(parent)):
        root = _find(parent, rid)
        lab = compact.setdefault(root, len(compact) + 1)
        labels[run_row[rid], run_start[rid]:run_end[rid]] = lab
    return labels


def component_sizes(labels: np.ndarray) -> np.ndarray:
    """Pixel count per label; index 0 is the background."""
    return np.bincount(np.asarray(labels).ravel())


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Set background regions not 4-connected to the image border to foreground."""
    mask = np.asarray(mask, bool)
    if mask.size == 0:
        return mask.copy()
    bg = connected_components(~mask, 4)
    border = np.unique(np.concatenate([bg[0], bg[-1], bg[:, 0], bg[:, -1]]))
    holes = (bg > 0) & ~np.isin(bg, border)
    return mask | holes


def remove_small(mask: np.ndarray, min_area: int, connectivity: int = 8) -> np.ndarray:
    mask = np.asarray(mask, bool)
    if min_area <= 0 or not mask.any():
        return mask.copy()
    labels = connected_components(mask, connectivity)
    keep = component_sizes(labels) >= min_area
    keep[0] = False
    return keep[labels]


def postprocess_pipeline(prob: np.ndarray, params: PostprocessParams | None = None,
                         original_w: int | None = None, original_h: int | None = None,
                         return_stages: bool = False):
    """Probability map -> LabeledMask at the original image size."""
    params = params or PostprocessParams()
    prob = np.asarray(prob, np.float32)
    h, w = prob.shape
    original_w = original_w or w
    original_h = original_h or h
    if (original_h, original_w) != (h, w):
        prob = np.clip(resize_bilinear(prob, original_w, original_h), 0, 1)
    threshold, binary = otsu_threshold(prob)
    opened = morph_open(binary, params.radius) if params.radius > 0 else binary
    filled = fill_holes(opened)
    cleaned = remove_small(filled, params.min_area, params.connectivity)
    labels = connected_components(cleaned, params.connectivity)
    if return_stages:
        return labels, dict(prob=prob, threshold=threshold, binary=binary,
                            opened=opened, filled=filled, cleaned=cleaned)
    return labels
