"""End-to-end evaluation and single-image inference."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import tensor as T
from ..metrics import MetricsReport, aggregate_report, evaluate_masks
from ..network import MiniLinkNet
from ..postprocess import postprocess_pipeline
from .config import ConfigError, ExperimentConfig
from .data import DatasetError, Record, load_dataset, load_pair
from .io import load_checkpoint, read_rgb, write_labels, write_prob_map
from .train import network_from, prepare_image

log = logging.getLogger(__name__)

# (record, rgb, labels) -> probability map at any size
Predictor = Callable[[Record | None, np.ndarray, np.ndarray | None], np.ndarray]


def predict_probability(net: MiniLinkNet, image_hwc: np.ndarray) -> np.ndarray:
    """Eval-mode forward pass; pads to a multiple of 32 and crops back."""
    h, w = image_hwc.shape[:2]
    ph, pw = -h % 32, -w % 32
    x = image_hwc
    if ph or pw:
        x = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="reflect" if min(h, w) > max(ph, pw) else "edge")
    with T.no_grad():
        out = net(T.Tensor(x.transpose(2, 0, 1)[None]), "eval")
    return out.final.data[0, 0, :h, :w].astype(np.float32)


def model_predictor(net: MiniLinkNet, config: ExperimentConfig) -> Predictor:
    def predict(record, rgb, labels):
        return predict_probability(net, prepare_image(rgb, config))
    return predict


def oracle_predictor(record, rgb, labels) -> np.ndarray:
    """Test hook: the ground truth itself, as a probability map."""
    return (labels > 0).astype(np.float32)


def check_compatible(meta: dict, config: ExperimentConfig) -> None:
    net_cfg = meta.get("network", {})
    want = config.network_config().in_channels
    if net_cfg.get("in_channels") != want:
        raise ConfigError(f"checkpoint expects {net_cfg.get('in_channels')} input channels but "
                          f"input_mode {config.input_mode!r} gives {want}")
    trained_mode = meta.get("experiment", {}).get("input_mode")
    if trained_mode and trained_mode != config.input_mode:
        raise ConfigError(f"checkpoint was trained with input_mode {trained_mode!r}, "
                          f"config asks for {config.input_mode!r}")


@dataclass
class EvaluationResult:
    report: MetricsReport
    csv_path: Path
    json_path: Path
    figure_paths: list[Path] = field(default_factory=list)
    predictions: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def evaluate(config: ExperimentConfig, checkpoint=None, split: str = "testA",
             predictor: Predictor | None = None, out_dir=None) -> EvaluationResult:
    """Segment every image of ``split`` and score it against its annotation.

    Writes ``report_<split>.csv`` and ``.json`` (one row per image plus a
    ``mean`` row) and, if enabled, figures into ``out_dir``.
    """
    if predictor is None:
        if checkpoint is None:
            raise ConfigError("evaluate needs a checkpoint or a predictor")
        ckpt = load_checkpoint(checkpoint)
        check_compatible(ckpt.meta, config)
        predictor = model_predictor(network_from(ckpt), config)
    records = load_dataset(config.data_dir).split(split)
    if not records:
        raise DatasetError(f"split {split!r} has no images in {config.data_dir}")
    params = config.postprocess_params()

    def run(rec: Record):
        rgb, labels = load_pair(rec)
        prob = predictor(rec, rgb, labels)
        seg = postprocess_pipeline(prob, params, rec.width, rec.height)
        metrics = evaluate_masks(labels, seg, rec.name, config.overlap_frac, config.hausdorff_mode)
        return rec, rgb, labels, seg, metrics

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(run, records))
    else:
        results = [run(r) for r in records]

    report = aggregate_report([r[4] for r in results], title=split)
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = EvaluationResult(report, report.write_csv(out / f"report_{split}.csv"),
                              report.write_json(out / f"report_{split}.json"),
                              predictions={r[0].name: r[3] for r in results})
    if config.figures:
        from .plotting import plot_metric_bars, plot_overlays
        result.figure_paths.append(plot_metric_bars(report, out / f"metrics_{split}.png"))
        samples = [(r[0].name, r[1], r[2], r[3]) for r in results[:6]]
        result.figure_paths.append(plot_overlays(samples, out / f"overlays_{split}.png"))
    log.info(report.summary())
    return result


def segment(config: ExperimentConfig, checkpoint, image_path, out_path,
            prob_path=None, net: MiniLinkNet | None = None) -> np.ndarray:
    """Full pipeline on one image; writes a 16-bit label PNG (and optional .pmap)."""
    if net is None:
        ckpt = load_checkpoint(checkpoint)
        check_compatible(ckpt.meta, config)
        net = network_from(ckpt)
    rgb = read_rgb(image_path)
    h, w = rgb.shape[:2]
    prob = predict_probability(net, prepare_image(rgb, config))
    labels = postprocess_pipeline(prob, config.postprocess_params(), w, h)
    write_labels(out_path, labels)
    if prob_path is not None:
        write_prob_map(prob_path, prob)
    return labels
