"""Dual-output LinkNet-style encoder-decoder.

Layout (input H×W, both divisible by 32)::

    stem      7x7/2 conv, norm, relu, 2x2 max-pool          -> H/4
    encoder   4 residual stages; stages 2-4 halve the size   -> H/4 .. H/32
    decoder   4 blocks; block i output + input of encoder i  -> H/16 .. H/4
    final     tconv x2, conv, tconv x2, 1x1 conv, sigmoid    -> H
    coarse    1x1 conv, sigmoid on the tapped decoder stage  -> H/tap

The coarse head gives a low-resolution probability map that is supervised
separately (its loss is weighted twice in the training objective).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import RunningStats, Tensor

PRESETS = {
    "tiny": dict(in_channels=1, stem_channels=8, encoder_channels=(8, 16, 32, 64), blocks_per_stage=1),
    "full": dict(in_channels=1, stem_channels=64, encoder_channels=(64, 128, 256, 512), blocks_per_stage=2),
}

# Decoder stage feeding the coarse head, keyed by downsampling factor.
TAP_STAGES = {4: 1, 8: 3, 16: 4}


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 1
    stem_channels: int = 64
    encoder_channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    blocks_per_stage: int = 2
    coarse_tap: int = 4
    seed: int = 0
    head_channels: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if len(self.encoder_channels) != 4:
            raise ValueError("encoder_channels needs exactly four stage widths")
        counts = (self.in_channels, self.stem_channels, self.blocks_per_stage, *self.encoder_channels)
        if min(counts) < 1 or (self.head_channels is not None and self.head_channels < 1):
            raise ValueError("channel and block counts must be >= 1")
        if self.coarse_tap not in TAP_STAGES:
            raise ValueError(f"coarse_tap must be one of {sorted(TAP_STAGES)}, got {self.coarse_tap}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "NetworkConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    @property
    def final_channels(self) -> int:
        return self.head_channels or max(self.stem_channels // 2, 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Module:
    """Parameter container; children and parameters are kept in definition order."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_stats", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, RunningStats):
            self._stats[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_stats(self, prefix: str = "") -> Iterator[tuple[str, RunningStats]]:
        for name, s in self._stats.items():
            yield prefix + name, s
        for name, child in self._children.items():
            yield from child.named_stats(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _he_normal(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in), requires_grad=True)


class Conv(Module):
    def __init__(self, rng, cin, cout, k, stride=1, padding=0, bias=False):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = _he_normal(rng, (cout, cin, k, k), cin * k * k)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvT(Module):
    """Transposed conv that multiplies the spatial size by ``stride``."""

    def __init__(self, rng, cin, cout, k=3, stride=2, bias=False):
        super().__init__()
        self.stride = stride
        self.padding = (k - 1) // 2 if k % 2 else (k - stride) // 2
        self.output_padding = stride + 2 * self.padding - k
        self.weight = _he_normal(rng, (cin, cout, k, k), cin * k * k)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride,
                                  self.padding, self.output_padding)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1):
        super().__init__()
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.stats = RunningStats.fresh(channels, momentum)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return T.batchnorm2d(x, self.gamma, self.beta, self.stats, mode)


class ConvNormReLU(Module):
    def __init__(self, conv: Module, channels: int):
        super().__init__()
        self.conv = conv
        self.norm = BatchNorm(channels)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return T.relu(self.norm(self.conv(x), mode))


class ResidualBlock(Module):
    """conv-norm-relu-conv-norm plus (projected) identity, relu after the add."""

    def __init__(self, rng, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = Conv(rng, cin, cout, 3, stride, 1)
        self.norm1 = BatchNorm(cout)
        self.conv2 = Conv(rng, cout, cout, 3, 1, 1)
        self.norm2 = BatchNorm(cout)
        if stride != 1 or cin != cout:
            self.proj = Conv(rng, cin, cout, 1, stride, 0)
            self.proj_norm = BatchNorm(cout)
        else:
            self.proj = None

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        y = T.relu(self.norm1(self.conv1(x), mode))
        y = self.norm2(self.conv2(y), mode)
        skip = x if self.proj is None else self.proj_norm(self.proj(x), mode)
        return T.relu(T.add(y, skip))


class DecoderBlock(Module):
    """1x1 reduce to m/4, transposed conv (x stride), 1x1 expand to n."""

    def __init__(self, rng, m: int, n: int, stride: int):
        super().__init__()
        mid = max(m // 4, 1)
        self.reduce = ConvNormReLU(Conv(rng, m, mid, 1), mid)
        self.up = ConvNormReLU(ConvT(rng, mid, mid, 3, stride), mid)
        self.expand = ConvNormReLU(Conv(rng, mid, n, 1), n)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return self.expand(self.up(self.reduce(x, mode), mode), mode)


class Stage(Module):
    def __init__(self, rng, cin: int, cout: int, blocks: int, stride: int):
        super().__init__()
        self.n = blocks
        for i in range(blocks):
            setattr(self, f"block{i}", ResidualBlock(rng, cin if i == 0 else cout, cout,
                                                     stride if i == 0 else 1))

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        for i in range(self.n):
            x = getattr(self, f"block{i}")(x, mode)
        return x


@dataclass
class NetworkOutputs:
    final: Tensor
    coarse: Tensor
    features: dict[str, Tensor] = field(default_factory=dict, repr=False)


class MiniLinkNet(Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        object.__setattr__(self, "config", config)
        rng = np.random.default_rng(config.seed)
        s, c = config.stem_channels, config.encoder_channels
        self.stem = ConvNormReLU(Conv(rng, config.in_channels, s, 7, 2, 3), s)
        widths_in = (s, c[0], c[1], c[2])
        for i in range(4):
            setattr(self, f"encoder{i + 1}",
                    Stage(rng, widths_in[i], c[i], config.blocks_per_stage, 1 if i == 0 else 2))
        # decoder i maps c[i-1] back to the input width of encoder i
        for i in (4, 3, 2, 1):
            setattr(self, f"decoder{i}",
                    DecoderBlock(rng, c[i - 1], widths_in[i - 1], 1 if i == 1 else 2))
        f = config.final_channels
        self.head_up1 = ConvNormReLU(ConvT(rng, s, f, 3, 2), f)
        self.head_conv = ConvNormReLU(Conv(rng, f, f, 3, 1, 1), f)
        self.head_up2 = ConvNormReLU(ConvT(rng, f, f, 2, 2), f)
        self.head_out = Conv(rng, f, 1, 1, bias=True)
        tap_stage = TAP_STAGES[config.coarse_tap]
        self.coarse_out = Conv(rng, widths_in[tap_stage - 1], 1, 1, bias=True)

    def __call__(self, x, mode: str = "train") -> NetworkOutputs:
        return forward(self, x, mode)


def build(config: NetworkConfig) -> MiniLinkNet:
    """Construct a network with deterministic He-normal initialization."""
    return MiniLinkNet(config)


def forward(net: MiniLinkNet, batch, mode: str = "train") -> NetworkOutputs:
    """Run the network on a B×C×H×W batch (Tensor or array)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.ndim != 4:
        raise ValueError(f"expected a B×C×H×W batch, got shape {x.shape}")
    if x.shape[1] != net.config.in_channels:
        raise ValueError(f"network expects {net.config.in_channels} input channels, got {x.shape[1]}")
    h, w = x.shape[2:]
    if h % 32 or w % 32:
        raise ValueError(f"spatial size {h}x{w} must be divisible by 32")

    stem = T.maxpool2d(net.stem(x, mode), 2, 2)
    enc = [stem]
    for i in range(1, 5):
        enc.append(getattr(net, f"encoder{i}")(enc[-1], mode))
    dec: dict[int, Tensor] = {}
    y = enc[4]
    for i in (4, 3, 2, 1):
        y = T.add(getattr(net, f"decoder{i}")(y, mode), enc[i - 1])
        dec[i] = y
    z = net.head_up1(y, mode)
    z = net.head_conv(z, mode)
    z = net.head_up2(z, mode)
    final = T.sigmoid(net.head_out(z))
    coarse = T.sigmoid(net.coarse_out(dec[TAP_STAGES[net.config.coarse_tap]]))
    feats = {f"encoder{i}": enc[i] for i in range(5)}
    feats.update({f"decoder{i}": d for i, d in dec.items()})
    return NetworkOutputs(final, coarse, feats)


def num_params(net: Module) -> int:
    """Number of learnable scalars; running statistics are not counted."""
    return int(sum(p.size for p in net.parameters()))


def downsample_target(mask: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool a binary mask by ``factor`` and keep cells with mean >= 0.5.

    Works on H×W or ...×H×W arrays; returns float32 zeros and ones.
    """
    mask = np.asarray(mask, dtype=np.float64)
    h, w = mask.shape[-2:]
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"mask size {h}x{w} is not divisible by {factor}")
    blocks = mask.reshape(*mask.shape[:-2], h // factor, factor, w // factor, factor)
    return (blocks.mean(axis=(-3, -1)) >= 0.5).astype(np.float32)
