"""Dataset discovery and the synthetic H&E-like gland generator.

Files follow the Warwick-QU naming: ``<split>_<N>.<ext>`` for images and
``<split>_<N>_anno.<ext>`` for label maps, with ``split`` in train, testA,
testB and ``ext`` in png, bmp.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..postprocess import fill_holes, morph_dilate, morph_open
from ..preprocess import StainMatrix, od_to_rgb, recompose
from .io import read_labels, write_labels, write_rgb

SPLITS = ("train", "testA", "testB")
_IMAGE_RE = re.compile(r"^(train|testA|testB)_(\d+)\.(png|bmp)$", re.IGNORECASE)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    image: Path
    annotation: Path
    split: str
    index: int
    width: int
    height: int

    @property
    def name(self) -> str:
        return f"{self.split}_{self.index}"


@dataclass
class DatasetIndex:
    root: Path
    records: list[Record] = field(default_factory=list)

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def counts(self) -> dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}

    def __len__(self) -> int:
        return len(self.records)


def _find_annotation(image: Path) -> Path | None:
    for ext in (image.suffix, ".png", ".bmp", ".PNG", ".BMP"):
        cand = image.with_name(f"{image.stem}_anno{ext}")
        if cand.exists():
            return cand
    return None


def load_dataset(root) -> DatasetIndex:
    """Index every image/annotation pair under ``root`` (non-recursive)."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    records = []
    for path in sorted(root.iterdir()):
        m = _IMAGE_RE.match(path.name)
        if not m:
            continue
        split = {"train": "train", "testa": "testA", "testb": "testB"}[m.group(1).lower()]
        anno = _find_annotation(path)
        if anno is None:
            raise DatasetError(f"missing annotation for image {path}")
        try:
            with Image.open(path) as im:
                w, h = im.size
            with Image.open(anno) as am:
                aw, ah = am.size
        except OSError as exc:
            raise DatasetError(f"unreadable file in {root}: {exc}") from exc
        if (w, h) != (aw, ah):
            raise DatasetError(f"annotation {anno} is {aw}x{ah} but image {path} is {w}x{h}")
        records.append(Record(path, anno, split, int(m.group(2)), w, h))
    records.sort(key=lambda r: (SPLITS.index(r.split), r.index))
    return DatasetIndex(root, records)


def load_pair(record: Record) -> tuple[np.ndarray, np.ndarray]:
    from .io import read_rgb
    return read_rgb(record.image), read_labels(record.annotation)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic gland images.

    Concentrations are hematoxylin/eosin amounts mixed through the standard
    stain matrix and quantized to 8-bit RGB.
    """

    size: int = 64
    gland_count: tuple[int, int] = (2, 4)
    axis_range: tuple[float, float] = (7.0, 12.0)
    ring_width: int = 2
    gap: int = 3
    background_he: tuple[float, float] = (0.15, 0.55)
    gland_he: tuple[float, float] = (0.35, 0.25)
    ring_he: tuple[float, float] = (1.1, 0.3)
    nuclei_density: float = 0.004
    noise: float = 0.05
    open_radius: int = 2
    min_area: int = 100
    seed: int = 0


def _ellipse(size: int, cy: float, cx: float, a: float, b: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v <= 1.0


def synthesize(spec: SyntheticSpec, rng: np.random.Generator,
               n_glands: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One (rgb, labels) pair.  Glands are disjoint, separated by ``gap`` pixels,
    and already invariant under opening with the default disk."""
    n = spec.size
    target = n_glands if n_glands is not None else int(rng.integers(spec.gland_count[0], spec.gland_count[1] + 1))
    labels = np.zeros((n, n), np.int32)
    occupied = np.zeros((n, n), bool)
    placed = 0
    for _ in range(400 * max(target, 1)):
        if placed == target:
            break
        a, b = rng.uniform(*spec.axis_range, size=2)
        theta = rng.uniform(0, np.pi)
        r = max(a, b)
        cy, cx = rng.uniform(r + 1, n - r - 2, size=2) if n - 2 * r - 3 > 0 else (n / 2, n / 2)
        shape = fill_holes(morph_open(_ellipse(n, cy, cx, a, b, theta), spec.open_radius))
        if shape.sum() < spec.min_area:
            continue
        if (morph_dilate(shape, spec.gap) & occupied).any():
            continue
        placed += 1
        labels[shape] = placed
        occupied |= shape
    if placed != target:
        raise RuntimeError(f"could not place {target} glands in a {n}x{n} image")

    conc = np.zeros((n, n, 3))
    conc[..., 0], conc[..., 1] = spec.background_he
    # scattered stromal nuclei
    nuclei = (rng.random((n, n)) < spec.nuclei_density) & ~occupied
    nuclei = morph_dilate(nuclei, 1)
    conc[nuclei, 0] = spec.ring_he[0]
    for lab in range(1, placed + 1):
        m = labels == lab
        core = m.copy()
        for _ in range(spec.ring_width):
            core = core & np.roll(core, 1, 0) & np.roll(core, -1, 0) & np.roll(core, 1, 1) & np.roll(core, -1, 1)
        ring = m & ~core
        conc[core, 0], conc[core, 1] = spec.gland_he
        conc[ring, 0], conc[ring, 1] = spec.ring_he
    conc[..., :2] += rng.normal(0, spec.noise, size=(n, n, 2))
    conc = np.maximum(conc, 0)
    rgb = od_to_rgb(recompose(conc, StainMatrix.default()))
    return rgb, labels


def generate_synthetic(spec: SyntheticSpec, n_images: int, out_dir, split: str = "train",
                       start_index: int = 1, n_glands: int | None = None) -> list[Path]:
    """Write ``n_images`` synthetic image/annotation pairs; deterministic per seed and split."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    rng = np.random.default_rng([spec.seed, SPLITS.index(split)])
    written = []
    for i in range(start_index, start_index + n_images):
        rgb, labels = synthesize(spec, rng, n_glands)
        written.append(write_rgb(out / f"{split}_{i}.png", rgb))
        write_labels(out / f"{split}_{i}_anno.png", labels)
    return written
