"""Stain deconvolution, unsharp masking, resizing and geometric augmentation.

Images are plain numpy arrays: RGB images are ``uint8`` H×W×3, gray images
are ``float32`` H×W with values in [0, 1], label masks are integer H×W.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Standard H&E optical-density directions (Ruifrok & Johnston).
HEMATOXYLIN_OD = (0.650, 0.704, 0.286)
EOSIN_OD = (0.072, 0.990, 0.105)

INPUT_MODES = ("rgb", "hematoxylin", "hematoxylin+unsharp")


def rgb_to_od(image: np.ndarray) -> np.ndarray:
    """Per-channel optical density ``-ln(max(v, 1) / 255)``; output H×W×3 float64."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an H×W×3 RGB image, got shape {image.shape}")
    v = np.maximum(image.astype(np.float64), 1.0)
    return -np.log(v / 255.0)


@dataclass(frozen=True)
class StainMatrix:
    """Three unit-norm OD stain directions, one per row, plus the inverse.

    Optical densities mix as ``od = c @ matrix`` for a concentration row
    vector ``c`` = (hematoxylin, eosin, residual).
    """

    matrix: np.ndarray
    inverse: np.ndarray = field(repr=False)

    @classmethod
    def from_vectors(cls, hematoxylin: Sequence[float], eosin: Sequence[float],
                     residual: Sequence[float] | None = None) -> "StainMatrix":
        h = _unit(hematoxylin)
        e = _unit(eosin)
        r = _unit(np.cross(h, e)) if residual is None else _unit(residual)
        m = np.stack([h, e, r])
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > 1e12:
            raise ValueError(f"stain matrix is singular (condition number {cond:g})")
        return cls(m, np.linalg.inv(m))

    @classmethod
    def default(cls) -> "StainMatrix":
        return cls.from_vectors(HEMATOXYLIN_OD, EOSIN_OD)


def _unit(v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if v.shape != (3,) or n == 0:
        raise ValueError(f"stain vector must be a non-zero 3-vector, got {v}")
    return v / n


@dataclass
class StainMaps:
    """Per-pixel stain concentrations.  ``raw`` keeps the unclamped H×W×3 values."""

    hematoxylin: np.ndarray
    eosin: np.ndarray
    residual: np.ndarray
    raw: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.hematoxylin.shape


def stain_deconvolve(od: np.ndarray, matrix: StainMatrix | None = None) -> StainMaps:
    matrix = matrix or StainMatrix.default()
    raw = np.asarray(od, dtype=np.float64) @ matrix.inverse
    clamped = np.maximum(raw, 0.0)
    return StainMaps(clamped[..., 0], clamped[..., 1], clamped[..., 2], raw)


def recompose(concentrations: np.ndarray, matrix: StainMatrix | None = None) -> np.ndarray:
    """Inverse of :func:`stain_deconvolve` on raw concentrations: returns OD."""
    matrix = matrix or StainMatrix.default()
    return np.asarray(concentrations, dtype=np.float64) @ matrix.matrix


def od_to_rgb(od: np.ndarray) -> np.ndarray:
    """Quantize optical densities back to 8-bit intensities."""
    return np.clip(np.rint(255.0 * np.exp(-od)), 0, 255).astype(np.uint8)


def hematoxylin_channel(maps: StainMaps) -> np.ndarray:
    """Min-max normalize the hematoxylin plane to [0, 1]; a constant plane gives zeros."""
    plane = maps.hematoxylin
    lo, hi = float(plane.min()), float(plane.max())
    if hi <= lo:
        return np.zeros(plane.shape, np.float32)
    return ((plane - lo) / (hi - lo)).astype(np.float32)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_axis(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = kernel.size // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="symmetric")
    out = np.zeros_like(img, dtype=np.float64)
    n = img.shape[axis]
    for i, kv in enumerate(kernel):
        out += kv * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with radius ceil(3 sigma) and mirrored borders."""
    k = gaussian_kernel1d(sigma)
    img = np.asarray(img, dtype=np.float64)
    return _filter_axis(_filter_axis(img, k, 0), k, 1).astype(np.float32)


def unsharp_mask(img: np.ndarray, sigma: float = 2.0, amount: float = 1.0) -> np.ndarray:
    if amount < 0:
        raise ValueError(f"amount must be non-negative, got {amount}")
    img = np.asarray(img, dtype=np.float32)
    if amount == 0:
        return np.clip(img, 0, 1)
    sharp = img + amount * (img - gaussian_blur(img, sigma))
    return np.clip(sharp, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Resizing
# ---------------------------------------------------------------------------

def _sample_coords(src: int, dst: int) -> np.ndarray:
    if dst == 1 or src == 1:
        return np.zeros(dst)
    return np.arange(dst) * ((src - 1) / (dst - 1))


def resize_bilinear(img: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an H×W or H×W×C image.

    Integer inputs are rounded back to their dtype; float inputs stay float32.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError(f"target size must be positive, got {target_w}x{target_h}")
    img = np.asarray(img)
    h, w = img.shape[:2]
    if (h, w) == (target_h, target_w):
        return img.copy()
    ys, xs = _sample_coords(h, target_h), _sample_coords(w, target_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    fy, fx = ys - y0, xs - x0
    src = img.astype(np.float64)
    if img.ndim == 3:
        fy, fx = fy[:, None, None], fx[None, :, None]
    else:
        fy, fx = fy[:, None], fx[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(img.dtype)
    return out.astype(np.float32)


def resize_nearest(mask: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Corner-aligned nearest-neighbour resize; labels are never blended."""
    if target_w < 1 or target_h < 1:
        raise ValueError(f"target size must be positive, got {target_w}x{target_h}")
    mask = np.asarray(mask)
    h, w = mask.shape[:2]
    yi = np.floor(_sample_coords(h, target_h) + 0.5).astype(int)
    xi = np.floor(_sample_coords(w, target_w) + 0.5).astype(int)
    return mask[yi][:, xi]


# ---------------------------------------------------------------------------
# Network input preparation
# ---------------------------------------------------------------------------

def network_input(rgb: np.ndarray, mode: str = "hematoxylin",
                  matrix: StainMatrix | None = None,
                  unsharp_sigma: float = 2.0, unsharp_amount: float = 1.0) -> np.ndarray:
    """Turn an RGB image into the C×H×W float32 array fed to the network."""
    if mode == "rgb":
        return (np.asarray(rgb, np.float32) / 255.0).transpose(2, 0, 1).copy()
    if mode not in INPUT_MODES:
        raise ValueError(f"unknown input mode {mode!r}; expected one of {INPUT_MODES}")
    hema = hematoxylin_channel(stain_deconvolve(rgb_to_od(rgb), matrix))
    if mode == "hematoxylin+unsharp":
        hema = unsharp_mask(hema, unsharp_sigma, unsharp_amount)
    return hema[None]


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def _rot(k: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda a: np.rot90(a, k, axes=(0, 1))


def _hflip(a: np.ndarray) -> np.ndarray:
    return a[:, ::-1]


def _vflip(a: np.ndarray) -> np.ndarray:
    return a[::-1]


_BASE = {
    "identity": lambda a: a,
    "rot90": _rot(1),
    "rot180": _rot(2),
    "rot270": _rot(3),
    "hflip": _hflip,
    "vflip": _vflip,
}


def transform_fn(name: str) -> Callable[[np.ndarray], np.ndarray]:
    """Resolve a transform name; ``"a+b"`` applies ``a`` then ``b``."""
    parts = name.split("+")
    try:
        fns = [_BASE[p] for p in parts]
    except KeyError as exc:
        raise ValueError(f"unknown transform {exc.args[0]!r} in {name!r}") from None

    def apply(a: np.ndarray) -> np.ndarray:
        for f in fns:
            a = f(a)
        return np.ascontiguousarray(a)

    return apply


def rotations_by_flips() -> tuple[str, ...]:
    """Four quarter-turns times three flip states (none, horizontal, vertical)."""
    out = []
    for rot in ("identity", "rot90", "rot180", "rot270"):
        for flip in ("", "hflip", "vflip"):
            out.append(rot if not flip else (flip if rot == "identity" else f"{rot}+{flip}"))
    return tuple(out)


def dihedral() -> tuple[str, ...]:
    """The eight distinct symmetries of the square."""
    return ("identity", "rot90", "rot180", "rot270",
            "hflip", "vflip", "rot90+hflip", "rot90+vflip")


Box = tuple[int, int, int, int]


@dataclass(frozen=True)
class AugmentSpec:
    """Which transforms to apply and which crops to cut from each result.

    ``crops`` is ``"quadrants"`` (four non-overlapping half-size crops),
    ``"full"`` (the whole transformed image) or an explicit tuple of
    ``(top, left, height, width)`` boxes.
    """

    transforms: tuple[str, ...] = field(default_factory=rotations_by_flips)
    crops: str | tuple[Box, ...] = "quadrants"

    def __post_init__(self) -> None:
        if not self.transforms:
            raise ValueError("AugmentSpec needs at least one transform")
        for name in self.transforms:
            transform_fn(name)
        if isinstance(self.crops, str) and self.crops not in ("quadrants", "full"):
            raise ValueError(f"unknown crop scheme {self.crops!r}")

    @property
    def crop_count(self) -> int:
        if self.crops == "quadrants":
            return 4
        if self.crops == "full":
            return 1
        return len(self.crops)

    @property
    def expansion_factor(self) -> int:
        return len(self.transforms) * self.crop_count

    def boxes(self, height: int, width: int) -> list[Box]:
        if self.crops == "full":
            return [(0, 0, height, width)]
        if self.crops == "quadrants":
            h2, w2 = height // 2, width // 2
            if h2 < 1 or w2 < 1:
                raise ValueError(f"image {height}x{width} too small for quadrant crops")
            return [(0, 0, h2, w2), (0, w2, h2, w2), (h2, 0, h2, w2), (h2, w2, h2, w2)]
        boxes = [tuple(int(v) for v in b) for b in self.crops]
        for top, left, bh, bw in boxes:
            if top < 0 or left < 0 or bh < 1 or bw < 1 or top + bh > height or left + bw > width:
                raise ValueError(f"crop {(top, left, bh, bw)} does not fit a {height}x{width} image")
        return boxes


def augment_one(image: np.ndarray, mask: np.ndarray, spec: AugmentSpec,
                transform: str, crop_index: int) -> tuple[np.ndarray, np.ndarray]:
    """A single (transform, crop) element of :func:`augment`'s output."""
    fn = transform_fn(transform)
    img_t, mask_t = fn(image), fn(mask)
    top, left, bh, bw = spec.boxes(*img_t.shape[:2])[crop_index]
    return (img_t[top:top + bh, left:left + bw].copy(),
            mask_t[top:top + bh, left:left + bw].copy())


def augment(image: np.ndarray, mask: np.ndarray,
            spec: AugmentSpec | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Apply every transform to image and mask alike, then cut every crop.

    Returns ``spec.expansion_factor`` pairs, ordered transform-major.
    """
    spec = spec or AugmentSpec()
    if image.shape[:2] != mask.shape[:2]:
        raise ValueError(f"image {image.shape[:2]} and mask {mask.shape[:2]} differ in size")
    return [augment_one(image, mask, spec, t, c)
            for t in spec.transforms for c in range(spec.crop_count)]
