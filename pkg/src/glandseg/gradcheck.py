"""Finite-difference verification of every differentiable op and loss.

Each case draws seeded random inputs in [-2, 2] (kept a small margin away
from kinks such as relu at 0 or clamp bounds, where central differences are
undefined), contracts the op's output with a fixed random tensor to get a
scalar, and runs :func:`glandseg.tensor.grad_check` on every input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .losses import LossKind, composite_loss, total_loss

Case = Callable[[np.random.Generator], tuple[Callable[[], T.Tensor], dict[str, T.Tensor]]]


def _uniform(rng, shape, lo=-2.0, hi=2.0, grad=True) -> T.Tensor:
    return T.Tensor(rng.uniform(lo, hi, size=shape), requires_grad=grad)


def _away_from(rng, shape, points=(0.0,), margin=0.05) -> T.Tensor:
    x = rng.uniform(-2, 2, size=shape)
    for p in points:
        close = np.abs(x - p) < margin
        x[close] = p + np.sign(x[close] - p + 1e-12) * margin * rng.uniform(1, 2, size=close.sum())
    return T.Tensor(x, requires_grad=True)


def _distinct(rng, shape) -> T.Tensor:
    n = int(np.prod(shape))
    vals = rng.permutation(n) * (4.0 / n) - 2.0
    return T.Tensor(vals.reshape(shape), requires_grad=True)


def _contract(out: T.Tensor, proj: np.ndarray) -> T.Tensor:
    return T.reduce_sum(T.mul(out, T.Tensor(proj)))


def _unary(op, make=_uniform):
    def case(rng):
        x = make(rng, (3, 4))
        proj = rng.standard_normal((3, 4))
        return (lambda: _contract(op(x), proj)), {"x": x}
    return case


def _binary(op, make_b=_uniform):
    def case(rng):
        a, b = _uniform(rng, (3, 4)), make_b(rng, (3, 4))
        proj = rng.standard_normal((3, 4))
        return (lambda: _contract(op(a, b), proj)), {"a": a, "b": b}
    return case


def _denominator(rng, shape):
    x = rng.uniform(0.5, 2.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return T.Tensor(x, requires_grad=True)


def _reduction(op):
    def case(rng):
        x = _uniform(rng, (2, 3, 4))
        return (lambda: T.scalar_mul(op(x), 1.7)), {"x": x}
    return case


def _conv_case(stride, padding):
    def case(rng):
        x, w, b = _uniform(rng, (1, 2, 5, 5)), _uniform(rng, (3, 2, 3, 3)), _uniform(rng, (3,))
        ho = (5 + 2 * padding - 3) // stride + 1
        proj = rng.standard_normal((1, 3, ho, ho))
        return (lambda: _contract(T.conv2d(x, w, b, stride, padding), proj)), {"x": x, "w": w, "b": b}
    return case


def _conv_t_case(stride, padding, output_padding, k=3):
    def case(rng):
        x, w, b = _uniform(rng, (1, 2, 3, 3)), _uniform(rng, (2, 3, k, k)), _uniform(rng, (3,))
        ho = (3 - 1) * stride - 2 * padding + k + output_padding
        proj = rng.standard_normal((1, 3, ho, ho))
        fn = lambda: _contract(T.conv_transpose2d(x, w, b, stride, padding, output_padding), proj)  # noqa: E731
        return fn, {"x": x, "w": w, "b": b}
    return case


def _pool_case(op, window, stride, size=4, make=_distinct):
    def case(rng):
        x = make(rng, (1, 2, size, size))
        with T.no_grad():
            shape = op(x, window, stride).shape
        proj = rng.standard_normal(shape)
        return (lambda: _contract(op(x, window, stride), proj)), {"x": x}
    return case


def _bn_case(mode):
    def case(rng):
        x, g, b = _uniform(rng, (2, 3, 4, 4)), _uniform(rng, (3,)), _uniform(rng, (3,))
        stats = T.RunningStats(rng.uniform(-0.5, 0.5, 3), rng.uniform(0.5, 1.5, 3))
        proj = rng.standard_normal((2, 3, 4, 4))
        return (lambda: _contract(T.batchnorm2d(x, g, b, stats, mode), proj)), {"x": x, "gamma": g, "beta": b}
    return case


def _loss_case(kind):
    def case(rng):
        G = T.Tensor((rng.random((8, 8)) < 0.5).astype(float))
        O = T.Tensor(rng.uniform(0.05, 0.95, (8, 8)), requires_grad=True)
        return (lambda: composite_loss(kind, G, O)), {"O": O}
    return case


def _total_case(kind):
    def case(rng):
        G = T.Tensor((rng.random((1, 1, 8, 8)) < 0.5).astype(float))
        Gc = T.Tensor((rng.random((1, 1, 2, 2)) < 0.5).astype(float))
        O = T.Tensor(rng.uniform(0.05, 0.95, (1, 1, 8, 8)), requires_grad=True)
        Oc = T.Tensor(rng.uniform(0.05, 0.95, (1, 1, 2, 2)), requires_grad=True)
        return (lambda: total_loss(kind, G, O, Gc, Oc).total), {"O_full": O, "O_coarse": Oc}
    return case


CASES: dict[str, Case] = {
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "div": _binary(T.div, _denominator),
    "neg": _unary(T.neg),
    "scalar_add": _unary(lambda x: T.scalar_add(x, 0.75)),
    "scalar_mul": _unary(lambda x: T.scalar_mul(x, -1.3)),
    "relu": _unary(T.relu, lambda rng, s: _away_from(rng, s, (0.0,))),
    "sigmoid": _unary(T.sigmoid),
    "exp": _unary(T.exp),
    "log": _unary(T.log, lambda rng, s: _uniform(rng, s, 0.1, 2.0)),
    "clamp": _unary(lambda x: T.clamp(x, -1.0, 1.0), lambda rng, s: _away_from(rng, s, (-1.0, 1.0))),
    "reduce_sum": _reduction(T.reduce_sum),
    "reduce_mean": _reduction(T.reduce_mean),
    "conv2d": _conv_case(1, 1),
    "conv2d_stride2": _conv_case(2, 1),
    "conv2d_nopad": _conv_case(1, 0),
    "conv_transpose2d": _conv_t_case(2, 1, 1),
    "conv_transpose2d_k2": _conv_t_case(2, 0, 0, k=2),
    "conv_transpose2d_stride1": _conv_t_case(1, 1, 0),
    "maxpool2d": _pool_case(T.maxpool2d, 2, 2),
    "maxpool2d_ragged": _pool_case(T.maxpool2d, 2, 2, size=5),
    "avgpool2d": _pool_case(T.avgpool2d, 2, 2, make=_uniform),
    "batchnorm2d_train": _bn_case("train"),
    "batchnorm2d_eval": _bn_case("eval"),
    "loss_L1": _loss_case(LossKind.L1),
    "loss_L2": _loss_case(LossKind.L2),
    "loss_L3": _loss_case(LossKind.L3),
    "total_loss_L3": _total_case(LossKind.L3),
}


@dataclass
class SuiteResult:
    name: str
    instances: int
    worst: float
    passed: bool


def check_case(name: str, instances: int = 20, seed: int = 0,
               epsilon: float = 1e-3, tolerance: float = 1e-3) -> SuiteResult:
    case = CASES[name]
    worst = 0.0
    passed = True
    for i in range(instances):
        rng = np.random.default_rng([seed, i, sum(map(ord, name))])
        fn, params = case(rng)
        report = T.grad_check(fn, params, epsilon, tolerance)
        worst = max(worst, report.worst)
        passed &= report.passed
    return SuiteResult(name, instances, worst, passed)


def run_suite(instances: int = 20, seed: int = 0, names=None, report=None) -> list[SuiteResult]:
    results = []
    for name in names or CASES:
        res = check_case(name, instances, seed)
        if report is not None:
            report(res)
        results.append(res)
    return results
