"""Object-level evaluation: object Dice, Hausdorff, object Hausdorff and F1.

Both inputs are label maps (0 = background, 1..K = objects).  Each segmented
object is paired with the ground-truth object it overlaps most, and each
ground-truth object with the segmented object it overlaps most; the two
directional, size-weighted averages are then averaged.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .distance import squared_edt


@dataclass
class ObjectSet:
    """Pixel coordinates (N×2 arrays of row, col) per object, in label order."""

    objects: list[np.ndarray]
    labels: list[int]
    shape: tuple[int, int]

    def __len__(self) -> int:
        return len(self.objects)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(o) for o in self.objects], dtype=np.int64)

    def label_image(self) -> np.ndarray:
        """Re-rasterize with objects numbered 1..n in list order."""
        img = np.zeros(self.shape, np.int32)
        for i, obj in enumerate(self.objects, start=1):
            img[obj[:, 0], obj[:, 1]] = i
        return img

    def union(self) -> np.ndarray:
        if not self.objects:
            return np.empty((0, 2), np.int64)
        return np.concatenate(self.objects)


def extract_objects(mask: np.ndarray) -> ObjectSet:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"label mask must be 2-d, got shape {mask.shape}")
    flat = mask.ravel()
    nz = np.flatnonzero(flat)
    labels = flat[nz]
    order = np.argsort(labels, kind="stable")
    nz, labels = nz[order], labels[order]
    uniq, starts = np.unique(labels, return_index=True)
    bounds = list(starts) + [len(nz)]
    objs = []
    for i in range(len(uniq)):
        idx = nz[bounds[i]:bounds[i + 1]]
        objs.append(np.stack(np.unravel_index(idx, mask.shape), axis=1).astype(np.int64))
    return ObjectSet(objs, [int(u) for u in uniq], mask.shape)


@dataclass
class MatchTable:
    """For each object of ``a``: index of its max-overlap partner in ``b`` (-1 if none)."""

    match: np.ndarray
    overlap: np.ndarray
    weights: np.ndarray


def match_max_overlap(a: ObjectSet, b: ObjectSet) -> MatchTable:
    """Pair every object in ``a`` with the ``b`` object of largest intersection.

    Ties go to the lowest-numbered ``b`` object; zero overlap means unmatched.
    """
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    b_img = b.label_image()
    match = np.full(len(a), -1, np.int64)
    overlap = np.zeros(len(a), np.int64)
    for i, obj in enumerate(a.objects):
        counts = np.bincount(b_img[obj[:, 0], obj[:, 1]], minlength=len(b) + 1)[1:]
        if counts.size and counts.max() > 0:
            j = int(np.argmax(counts))
            match[i], overlap[i] = j, counts[j]
    sizes = a.sizes
    weights = sizes / sizes.sum() if len(a) else np.zeros(0)
    return MatchTable(match, overlap, weights)


def _check_pair(gt: np.ndarray, seg: np.ndarray) -> None:
    if np.shape(gt) != np.shape(seg):
        raise ValueError(f"dimension mismatch: {np.shape(gt)} vs {np.shape(seg)}")


def _dice_direction(src: ObjectSet, dst: ObjectSet) -> float:
    if not len(src):
        return 0.0
    table = match_max_overlap(src, dst)
    src_sizes, dst_sizes = src.sizes, dst.sizes
    # sum |O_i| * Dice_i, then divide once: a perfect match gives exactly 1
    total = 0.0
    for i, j in enumerate(table.match):
        if j < 0:
            continue
        total += src_sizes[i] * (2.0 * table.overlap[i] / (src_sizes[i] + dst_sizes[j]))
    return float(total / src_sizes.sum())


def object_dice(gt: np.ndarray, seg: np.ndarray) -> float:
    """Size-weighted two-way object Dice; 1 when both maps are empty."""
    _check_pair(gt, seg)
    g, s = extract_objects(gt), extract_objects(seg)
    if not len(g) and not len(s):
        return 1.0
    return 0.5 * (_dice_direction(s, g) + _dice_direction(g, s))


# ---------------------------------------------------------------------------
# Hausdorff
# ---------------------------------------------------------------------------

def boundary(coords: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Pixels of the set with at least one 4-neighbour outside it."""
    coords = np.asarray(coords, np.int64)
    lo = coords.min(axis=0) - 1
    local = coords - lo
    h, w = local.max(axis=0) + 2
    m = np.zeros((h, w), bool)
    m[local[:, 0], local[:, 1]] = True
    interior = m.copy()
    interior[1:-1, 1:-1] &= m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
    edge = m & ~interior
    return np.argwhere(edge) + lo


def _directed_sq(src: np.ndarray, dst: np.ndarray) -> int:
    """max over src of squared distance to the nearest dst pixel, via the EDT."""
    both = np.concatenate([src, dst])
    lo = both.min(axis=0)
    hi = both.max(axis=0)
    feats = np.zeros(tuple(hi - lo + 1), bool)
    feats[dst[:, 0] - lo[0], dst[:, 1] - lo[1]] = True
    sq = squared_edt(feats)
    return int(sq[src[:, 0] - lo[0], src[:, 1] - lo[1]].max())


def hausdorff(a: np.ndarray, b: np.ndarray, mode: str = "pixels") -> float:
    """Symmetric Hausdorff distance between two non-empty pixel sets.

    ``mode="boundary"`` restricts both sets to their boundary pixels first.
    """
    a = np.asarray(a, np.int64).reshape(-1, 2)
    b = np.asarray(b, np.int64).reshape(-1, 2)
    if not len(a) or not len(b):
        raise ValueError("hausdorff distance needs two non-empty sets")
    if mode == "boundary":
        a, b = boundary(a), boundary(b)
    elif mode != "pixels":
        raise ValueError(f"unknown hausdorff mode {mode!r}")
    return math.sqrt(max(_directed_sq(a, b), _directed_sq(b, a)))


def image_diagonal(shape: tuple[int, int]) -> float:
    return math.hypot(shape[0], shape[1])


def _hausdorff_direction(src: ObjectSet, dst: ObjectSet, mode: str) -> float:
    if not len(src):
        return 0.0
    table = match_max_overlap(src, dst)
    dst_all = dst.union()
    total = 0.0
    for i, w in enumerate(table.weights):
        j = table.match[i]
        if j >= 0:
            d = hausdorff(src.objects[i], dst.objects[j], mode)
        elif len(dst_all):
            d = hausdorff(src.objects[i], dst_all, mode)
        else:
            d = image_diagonal(src.shape)
        total += w * d
    return total


def object_hausdorff(gt: np.ndarray, seg: np.ndarray, mode: str = "pixels") -> float:
    """Size-weighted two-way object Hausdorff.

    An object without any overlapping partner is measured against the whole
    opposite foreground, or charged the image diagonal if that is empty.
    """
    _check_pair(gt, seg)
    g, s = extract_objects(gt), extract_objects(seg)
    return 0.5 * (_hausdorff_direction(s, g, mode) + _hausdorff_direction(g, s, mode))


# ---------------------------------------------------------------------------
# F1
# ---------------------------------------------------------------------------

@dataclass
class F1Result:
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


def f1_object(gt: np.ndarray, seg: np.ndarray, overlap_frac: float = 0.5) -> F1Result:
    """Object-level F1.

    A segmented object is a true positive when it covers more than
    ``overlap_frac`` of a still-unmatched ground-truth object; pairs are
    assigned one-to-one, greedily by decreasing overlap.
    """
    _check_pair(gt, seg)
    g, s = extract_objects(gt), extract_objects(seg)
    if not len(g) and not len(s):
        return F1Result(1.0, 1.0, 1.0, 0, 0, 0)
    g_img = g.label_image()
    g_sizes = g.sizes
    candidates = []
    for i, obj in enumerate(s.objects):
        counts = np.bincount(g_img[obj[:, 0], obj[:, 1]], minlength=len(g) + 1)[1:]
        for j in np.flatnonzero(counts > overlap_frac * g_sizes):
            candidates.append((-int(counts[j]), i, int(j)))
    candidates.sort()
    used_s, used_g = set(), set()
    for _, i, j in candidates:
        if i not in used_s and j not in used_g:
            used_s.add(i)
            used_g.add(j)
    tp = len(used_s)
    fp, fn = len(s) - tp, len(g) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return F1Result(f1, precision, recall, tp, fp, fn)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class ImageMetrics:
    name: str
    object_dice: float
    f1: float
    object_hausdorff: float
    precision: float = 0.0
    recall: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    n_gt: int = 0
    n_seg: int = 0


def evaluate_masks(gt: np.ndarray, seg: np.ndarray, name: str = "",
                   overlap_frac: float = 0.5, hausdorff_mode: str = "pixels") -> ImageMetrics:
    f1 = f1_object(gt, seg, overlap_frac)
    return ImageMetrics(
        name=name,
        object_dice=object_dice(gt, seg),
        f1=f1.f1,
        object_hausdorff=object_hausdorff(gt, seg, hausdorff_mode),
        precision=f1.precision, recall=f1.recall,
        tp=f1.tp, fp=f1.fp, fn=f1.fn,
        n_gt=int(len(np.unique(gt[gt > 0]))), n_seg=int(len(np.unique(seg[seg > 0]))),
    )


COLUMNS = ("name", "object_dice", "f1", "object_hausdorff",
           "precision", "recall", "tp", "fp", "fn", "n_gt", "n_seg")
# Header names matching the published results tables.
TABLE_HEADERS = {"object_dice": "Object Dice", "f1": "F1 Score", "object_hausdorff": "Hausdorff"}


@dataclass
class MetricsReport:
    rows: list[ImageMetrics]
    mean: ImageMetrics = field(init=False)
    title: str = ""

    def __post_init__(self) -> None:
        if not self.rows:
            raise ValueError("cannot aggregate an empty set of image results")
        n = len(self.rows)
        avg = {c: sum(getattr(r, c) for r in self.rows) / n for c in COLUMNS[1:]}
        self.mean = ImageMetrics(name="mean", **avg)

    def table_row(self) -> dict[str, float]:
        return {TABLE_HEADERS[k]: getattr(self.mean, k) for k in TABLE_HEADERS}

    def summary(self) -> str:
        m = self.mean
        return (f"{self.title + ': ' if self.title else ''}{len(self.rows)} images  "
                f"Object Dice {m.object_dice:.3f}  F1 Score {m.f1:.3f}  "
                f"Hausdorff {m.object_hausdorff:.2f}")

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=COLUMNS)
            writer.writeheader()
            for r in [*self.rows, self.mean]:
                writer.writerow(asdict(r))
        return path

    def to_dict(self) -> dict:
        return {"title": self.title,
                "columns": list(COLUMNS),
                "images": [asdict(r) for r in self.rows],
                "aggregate": asdict(self.mean),
                "table": self.table_row()}

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def aggregate_report(results: Sequence[ImageMetrics] | Iterable[ImageMetrics],
                     title: str = "") -> MetricsReport:
    return MetricsReport(list(results), title=title)
