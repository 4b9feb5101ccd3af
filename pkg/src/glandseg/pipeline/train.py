"""Training loop: data preparation, Adam, logging and checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..losses import LossValues, total_loss
from ..network import MiniLinkNet, NetworkConfig, build, downsample_target
from ..preprocess import augment_one, network_input, resize_bilinear, resize_nearest
from .config import ExperimentConfig
from .data import DatasetError, load_dataset, load_pair
from .io import Checkpoint, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "epoch", *LossValues.FIELDS)


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


class Adam:
    def __init__(self, params: dict[str, T.Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            if self.lr:
                update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
                p.data = (p.data - update).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

def crop_to_multiple(a: np.ndarray, multiple: int = 32) -> np.ndarray:
    """Center-crop the two leading axes down to a multiple (at least ``multiple``)."""
    h, w = a.shape[:2]
    th, tw = max(h // multiple, 1) * multiple, max(w // multiple, 1) * multiple
    if th > h or tw > w:
        pad = [(0, max(th - h, 0)), (0, max(tw - w, 0))] + [(0, 0)] * (a.ndim - 2)
        a = np.pad(a, pad, mode="reflect" if a.dtype.kind == "f" else "constant")
        h, w = a.shape[:2]
    top, left = (h - th) // 2, (w - tw) // 2
    return a[top:top + th, left:left + tw]


def prepare_image(rgb: np.ndarray, config: ExperimentConfig) -> np.ndarray:
    """RGB -> H×W×C float32 network input at the configured working size."""
    size = config.resize_size()
    if size is not None:
        rgb = resize_bilinear(rgb, *size)
    chw = network_input(rgb, config.input_mode, config.stain_matrix(),
                        config.unsharp_sigma, config.unsharp_amount)
    return chw.transpose(1, 2, 0)


def prepare_mask(labels: np.ndarray, config: ExperimentConfig) -> np.ndarray:
    size = config.resize_size()
    if size is not None:
        labels = resize_nearest(labels, *size)
    return (labels > 0).astype(np.float32)


@dataclass
class TrainingSet:
    images: list[np.ndarray]
    masks: list[np.ndarray]
    samples: list[tuple[int, str, int]]

    def sample(self, config: ExperimentConfig, item: tuple[int, str, int]):
        i, transform, crop = item
        img, mask = augment_one(self.images[i], self.masks[i], config.augment_spec(), transform, crop)
        return crop_to_multiple(img), crop_to_multiple(mask)


def build_training_set(config: ExperimentConfig) -> TrainingSet:
    index = load_dataset(config.data_dir)
    records = index.split(config.train_split)
    if not records:
        raise DatasetError(f"no '{config.train_split}' images found in {config.data_dir}")
    images, masks = [], []
    for rec in records:
        rgb, labels = load_pair(rec)
        images.append(prepare_image(rgb, config))
        masks.append(prepare_mask(labels, config))
    spec = config.augment_spec()
    samples = [(i, t, c) for i in range(len(images)) for t in spec.transforms for c in range(spec.crop_count)]
    return TrainingSet(images, masks, samples)


def iter_batches(ts: TrainingSet, config: ExperimentConfig, rng: np.random.Generator):
    """One epoch of batches; samples are shuffled and grouped by spatial shape."""
    order = rng.permutation(len(ts.samples))
    buckets: dict[tuple, list] = {}
    for idx in order:
        img, mask = ts.sample(config, ts.samples[idx])
        bucket = buckets.setdefault(img.shape, [])
        bucket.append((img, mask))
        if len(bucket) == config.batch_size:
            yield _stack(bucket)
            buckets[img.shape] = []
    for bucket in buckets.values():
        if bucket:
            yield _stack(bucket)


def _stack(pairs):
    x = np.stack([p[0].transpose(2, 0, 1) for p in pairs]).astype(np.float32)
    y = np.stack([p[1] for p in pairs])[:, None].astype(np.float32)
    return x, y


# ---------------------------------------------------------------------------
# Checkpoint conversion
# ---------------------------------------------------------------------------

def checkpoint_from(net: MiniLinkNet, opt: Adam | None, config: ExperimentConfig,
                    step: int, rng: np.random.Generator | None = None, epoch: int = 0) -> Checkpoint:
    tensors = {}
    for name, p in net.named_parameters():
        tensors[f"param/{name}"] = p.data
    for name, s in net.named_stats():
        tensors[f"stats/{name}.mean"] = s.mean
        tensors[f"stats/{name}.var"] = s.var
    if opt is not None:
        for name in opt.m:
            tensors[f"adam_m/{name}"] = opt.m[name]
            tensors[f"adam_v/{name}"] = opt.v[name]
    meta = {
        "format": "glandseg-checkpoint",
        "network": net.config.to_dict(),
        "experiment": config.to_dict(),
        "step": step,
        "epoch": epoch,
        "optimizer_step": opt.step_count if opt is not None else 0,
        "rng_state": rng.bit_generator.state if rng is not None else None,
    }
    return Checkpoint(meta, tensors)


def network_from(ckpt: Checkpoint) -> MiniLinkNet:
    net = build(NetworkConfig.from_dict(ckpt.meta["network"]))
    for name, p in net.named_parameters():
        arr = ckpt.tensors[f"param/{name}"]
        if arr.shape != p.shape:
            raise ValueError(f"checkpoint tensor {name} has shape {arr.shape}, network expects {p.shape}")
        p.data = arr.copy()
    for name, s in net.named_stats():
        s.mean = ckpt.tensors[f"stats/{name}.mean"].copy()
        s.var = ckpt.tensors[f"stats/{name}.var"].copy()
    return net


def load_network(path) -> MiniLinkNet:
    return network_from(load_checkpoint(path))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    net: MiniLinkNet
    checkpoint_path: Path
    log_path: Path
    history: list[dict] = field(default_factory=list)
    figure_paths: list[Path] = field(default_factory=list)

    @property
    def final(self) -> dict:
        return self.history[-1] if self.history else {}


def train_step(net: MiniLinkNet, opt: Adam, x: np.ndarray, y: np.ndarray,
               config: ExperimentConfig, step: int) -> LossValues:
    kind, coarse_kind = config.loss_kinds()
    T.reset_tape()
    out = net(T.Tensor(x), "train")
    g_coarse = downsample_target(y, net.config.coarse_tap)
    values = total_loss(kind, T.Tensor(y), out.final, T.Tensor(g_coarse), out.coarse,
                        config.smooth, coarse_kind)
    if not math.isfinite(values.l_final):
        raise TrainingDivergedError(step, values.l_final)
    T.backward(values.total)
    opt.step()
    opt.zero_grad()
    values.total = None
    return values


def train(config: ExperimentConfig, progress=None) -> TrainResult:
    """Train from scratch according to ``config``; writes the log CSV and checkpoints.

    Stops after ``epochs`` epochs or ``max_steps`` steps, whichever comes first.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts = build_training_set(config)
    net = build(config.network_config())
    params = dict(net.named_parameters())
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng([config.seed, 1])
    log_path = out_dir / "train_log.csv"
    history: list[dict] = []
    step = 0
    epoch = 0
    done = False
    with log_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for epoch in range(1, config.epochs + 1):
            for x, y in iter_batches(ts, config, rng):
                step += 1
                values = train_step(net, opt, x, y, config, step)
                row = {"step": step, "epoch": epoch, **values.row()}
                writer.writerow(row)
                history.append(row)
                if progress is not None:
                    progress(row)
                if config.checkpoint_every and step % config.checkpoint_every == 0:
                    save_checkpoint(out_dir / f"checkpoint_step{step}.ckpt",
                                    checkpoint_from(net, opt, config, step, rng, epoch))
                if config.max_steps and step >= config.max_steps:
                    done = True
                    break
            if done:
                break
    ckpt_path = save_checkpoint(out_dir / "checkpoint.ckpt",
                                checkpoint_from(net, opt, config, step, rng, epoch))
    log.info("trained %d steps; final l_final %.4f", step, history[-1]["l_final"] if history else float("nan"))
    result = TrainResult(net, ckpt_path, log_path, history)
    if config.figures and history:
        from .plotting import plot_training_curves
        result.figure_paths.append(plot_training_curves(history, out_dir / "training_curves.png"))
    return result
