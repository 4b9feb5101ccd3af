"""Segmentation losses: BCE, soft Dice, soft accuracy and their composites.

All functions take the ground truth ``G`` (zeros and ones) and the predicted
probability map ``O`` as tensors of equal shape and return scalar tensors.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

PROB_EPS = 1e-7
COARSE_WEIGHT = 2.0


class LossKind(str, enum.Enum):
    L1 = "L1"   # BCE - e^(1+Dice)
    L2 = "L2"   # BCE - e^(1+Dice) - Accuracy
    L3 = "L3"   # 2 BCE - e^(1+Dice) - Accuracy

    @classmethod
    def parse(cls, value) -> "LossKind":
        try:
            return cls(str(getattr(value, "value", value)).upper())
        except ValueError:
            raise ValueError(f"unknown loss kind {value!r}; expected L1, L2 or L3") from None


def _pair(G, O) -> tuple[Tensor, Tensor]:
    G, O = T.as_tensor(G), T.as_tensor(O)
    if G.shape != O.shape:
        raise ValueError(f"ground truth {G.shape} and prediction {O.shape} differ in shape")
    return G, O


def bce(G, O) -> Tensor:
    """Mean binary cross-entropy with the prediction clamped to [1e-7, 1 - 1e-7]."""
    G, O = _pair(G, O)
    Oc = T.clamp(O, PROB_EPS, 1 - PROB_EPS)
    per_pixel = G * T.log(Oc) + (1 - G) * T.log(1 - Oc)
    return -T.reduce_mean(per_pixel)


def soft_dice(G, O, smooth: float = 1.0) -> Tensor:
    """``(2 sum(G*O) + S) / (sum(G) + sum(O) + S)``."""
    if smooth < 0:
        raise ValueError("smoothing constant must be non-negative")
    G, O = _pair(G, O)
    inter = T.reduce_sum(G * O)
    return (2 * inter + smooth) / (T.reduce_sum(G) + T.reduce_sum(O) + smooth)


def soft_accuracy(G, O) -> Tensor:
    """Mean of ``G*O + (1-G)*(1-O)``; equals (TP+TN)/N when O is binary."""
    G, O = _pair(G, O)
    return T.reduce_mean(G * O + (1 - G) * (1 - O))


def hard_accuracy(G: np.ndarray, O: np.ndarray) -> float:
    G, O = np.asarray(G).astype(bool), np.asarray(O).astype(bool)
    tp = np.sum(G & O)
    tn = np.sum(~G & ~O)
    fp = np.sum(~G & O)
    fn = np.sum(G & ~O)
    return float((tp + tn) / (tp + tn + fp + fn))


@dataclass
class _Terms:
    bce: Tensor
    dice: Tensor
    accuracy: Tensor
    loss: Tensor


def _composite_terms(kind: LossKind, G, O, smooth: float) -> _Terms:
    kind = LossKind.parse(kind)
    b = bce(G, O)
    d = soft_dice(G, O, smooth)
    acc = soft_accuracy(G, O)
    dice_term = T.exp(1 + d)
    if kind is LossKind.L1:
        loss = b - dice_term
    elif kind is LossKind.L2:
        loss = b - dice_term - acc
    else:
        loss = 2 * b - dice_term - acc
    return _Terms(b, d, acc, loss)


def composite_loss(kind, G, O, smooth: float = 1.0) -> Tensor:
    return _composite_terms(kind, G, O, smooth).loss


@dataclass
class LossValues:
    """Loss terms for one step; ``bce``/``dice``/``accuracy`` describe the final head."""

    bce: float
    dice: float
    accuracy: float
    l_i: float
    l_o: float
    l_final: float
    total: Tensor | None = None

    FIELDS = ("bce", "dice", "accuracy", "l_i", "l_o", "l_final")

    def row(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.FIELDS}


def total_loss(kind, G_full, O_full, G_coarse, O_coarse, smooth: float = 1.0,
               coarse_kind=None) -> LossValues:
    """Weighted dual-head objective ``2 * L_i + L_o``.

    ``L_i`` scores the coarse head, ``L_o`` the full-resolution head.  The
    differentiable total is returned in ``LossValues.total``.
    """
    inner = _composite_terms(coarse_kind or kind, G_coarse, O_coarse, smooth)
    outer = _composite_terms(kind, G_full, O_full, smooth)
    total = COARSE_WEIGHT * inner.loss + outer.loss
    l_i, l_o = inner.loss.item(), outer.loss.item()
    return LossValues(
        bce=outer.bce.item(), dice=outer.dice.item(), accuracy=outer.accuracy.item(),
        l_i=l_i, l_o=l_o, l_final=COARSE_WEIGHT * l_i + l_o, total=total,
    )


def perfect_value(kind) -> float:
    """Closed-form loss at a perfect binary prediction with S = 1."""
    kind = LossKind.parse(kind)
    return -math.e ** 2 - (0.0 if kind is LossKind.L1 else 1.0)
