"""File formats: images, label maps, probability maps and checkpoints.

Probability map (``.pmap``)::

    b"PMAP" | uint32 version=1 | uint32 height | uint32 width | float32[h*w]

Checkpoint (``.ckpt``)::

    b"GLANDSEG" | uint32 version | uint32 n | n bytes of UTF-8 JSON metadata
    | uint32 count | count * (uint16 name_len, name, uint8 ndim,
                              ndim * uint32 dims, float32 data)

All integers and floats are little-endian.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

PMAP_MAGIC = b"PMAP"
CKPT_MAGIC = b"GLANDSEG"
CKPT_VERSION = 1


def read_rgb(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            return np.array(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def write_rgb(path, image: np.ndarray) -> Path:
    path = Path(path)
    Image.fromarray(np.asarray(image, np.uint8)).save(path)
    return path


def read_labels(path) -> np.ndarray:
    """Integer label map; multi-channel files use their first channel."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read annotation {path}: {exc}") from exc
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr.astype(np.int32)


def write_labels(path, labels: np.ndarray) -> Path:
    """16-bit single-channel PNG, pixel value = label."""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 65535:
        raise ValueError("labels must fit in 16 bits")
    path = Path(path)
    Image.fromarray(labels.astype(np.uint16)).save(path, format="PNG")
    return path


def write_gray(path, img: np.ndarray) -> Path:
    path = Path(path)
    Image.fromarray(np.clip(np.rint(np.asarray(img) * 255), 0, 255).astype(np.uint8)).save(path)
    return path


def write_prob_map(path, prob: np.ndarray) -> Path:
    prob = np.asarray(prob, dtype="<f4")
    if prob.ndim != 2:
        raise ValueError("probability map must be 2-d")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(PMAP_MAGIC + struct.pack("<III", 1, *prob.shape))
        fh.write(prob.tobytes())
    return path


def read_prob_map(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != PMAP_MAGIC:
        raise ValueError(f"{path} is not a probability map file")
    version, h, w = struct.unpack_from("<III", raw, 4)
    if version != 1:
        raise ValueError(f"unsupported probability map version {version}")
    return np.frombuffer(raw, dtype="<f4", count=h * w, offset=16).reshape(h, w).astype(np.float32)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Everything needed to resume training or run inference.

    ``tensors`` maps names to float32 arrays: ``param/*`` learnable weights,
    ``stats/*`` normalization running statistics, ``adam_m/*`` and
    ``adam_v/*`` optimizer moments.
    """

    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    blob = json.dumps(ckpt.meta, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(blob)), blob,
             struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        key = name.encode()
        parts.append(struct.pack("<HB", len(key), arr.ndim) + key)
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    version, n = struct.unpack_from("<II", raw, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16
    meta = json.loads(raw[off:off + n])
    off += n
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors = {}
    for _ in range(count):
        name_len, ndim = struct.unpack_from("<HB", raw, off)
        off += 3
        name = raw[off:off + name_len].decode()
        off += name_len
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
    return Checkpoint(meta, tensors)
