"""Experiment configuration and the flat ``key = value`` config file format.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Keys are the field names of :class:`ExperimentConfig`.  Tuples are written
comma-separated (``encoder_channels = 8,16,32,64``) and sizes as ``WxH``
(``resize = none`` keeps images at their native size).
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from ..losses import LossKind
from ..network import NetworkConfig
from ..postprocess import PostprocessParams
from ..preprocess import INPUT_MODES, AugmentSpec, StainMatrix, dihedral, rotations_by_flips

TRANSFORM_SETS = {"rotflip": rotations_by_flips, "dihedral": dihedral, "none": lambda: ("identity",)}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # paths
    data_dir: str = "data"
    out_dir: str = "runs/default"
    train_split: str = "train"
    # inputs and preprocessing
    input_mode: str = "hematoxylin"
    resize: str = "832x576"
    stain_hematoxylin: str = "0.650,0.704,0.286"
    stain_eosin: str = "0.072,0.990,0.105"
    unsharp_sigma: float = 2.0
    unsharp_amount: float = 1.0
    transforms: str = "rotflip"
    crops: str = "quadrants"
    # network
    preset: str = "tiny"
    stem_channels: int = 0
    encoder_channels: str = ""
    blocks_per_stage: int = 0
    coarse_tap: int = 4
    # loss
    loss: str = "L3"
    coarse_loss: str = ""
    smooth: float = 1.0
    # optimization
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 100
    max_steps: int = 0
    seed: int = 0
    checkpoint_every: int = 0
    # post-processing and metrics
    radius: int = 2
    min_area: int = 100
    connectivity: int = 8
    overlap_frac: float = 0.5
    hausdorff_mode: str = "pixels"
    # reporting
    figures: bool = True
    workers: int = 1

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")
        LossKind.parse(self.loss)
        if self.coarse_loss:
            LossKind.parse(self.coarse_loss)
        for name in ("lr", "beta1", "beta2", "adam_eps", "smooth", "unsharp_sigma", "unsharp_amount",
                     "overlap_frac", "min_area", "radius", "max_steps", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("batch_size", "epochs", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        self.resize_size()
        try:
            self.network_config()
            self.augment_spec()
            self.postprocess_params()
            self.stain_matrix()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived objects -------------------------------------------------

    def resize_size(self) -> tuple[int, int] | None:
        """(width, height), or None when resize is ``none`` (keep native size)."""
        if self.resize.strip().lower() in ("", "none"):
            return None
        try:
            w, h = (int(v) for v in self.resize.lower().split("x"))
        except ValueError:
            raise ConfigError(f"resize must look like 832x576, got {self.resize!r}") from None
        if w < 1 or h < 1:
            raise ConfigError("resize dimensions must be positive")
        return w, h

    def network_config(self) -> NetworkConfig:
        overrides = {"in_channels": 3 if self.input_mode == "rgb" else 1,
                     "coarse_tap": self.coarse_tap, "seed": self.seed}
        if self.stem_channels:
            overrides["stem_channels"] = self.stem_channels
        if self.encoder_channels:
            overrides["encoder_channels"] = tuple(int(v) for v in self.encoder_channels.split(","))
        if self.blocks_per_stage:
            overrides["blocks_per_stage"] = self.blocks_per_stage
        return NetworkConfig.preset(self.preset, **overrides)

    def augment_spec(self) -> AugmentSpec:
        if self.transforms in TRANSFORM_SETS:
            names = TRANSFORM_SETS[self.transforms]()
        else:
            names = tuple(t.strip() for t in self.transforms.split(",") if t.strip())
        return AugmentSpec(names, self.crops)

    def postprocess_params(self) -> PostprocessParams:
        return PostprocessParams(self.radius, self.min_area, self.connectivity)

    def stain_matrix(self) -> StainMatrix:
        h = [float(v) for v in self.stain_hematoxylin.split(",")]
        e = [float(v) for v in self.stain_eosin.split(",")]
        return StainMatrix.from_vectors(h, e)

    def loss_kinds(self) -> tuple[LossKind, LossKind]:
        outer = LossKind.parse(self.loss)
        return outer, LossKind.parse(self.coarse_loss) if self.coarse_loss else outer

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


_HINTS = typing.get_type_hints(ExperimentConfig)


def coerce(key: str, raw) -> object:
    if key not in _HINTS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _HINTS[key]
    if not isinstance(raw, str):
        return kind(raw)
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str) -> dict[str, object]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = coerce(key, value)
    return values


def load_config(path=None, overrides: dict[str, object] | None = None,
                echo=None) -> ExperimentConfig:
    """Read a config file (optional) and apply overrides; overrides win.

    ``echo`` is called with a message for every override that changes a value.
    """
    values: dict[str, object] = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {p}: {exc}") from exc
        values.update(parse_config_text(text))
    defaults = {f.name: f.default for f in fields(ExperimentConfig)}
    for key, raw in (overrides or {}).items():
        new = coerce(key, raw)
        old = values.get(key, defaults[key])
        if echo is not None and new != old:
            echo(f"override: {key} = {new} (was {old})")
        values[key] = new
    return ExperimentConfig(**values)
