"""Central finite-difference verification of the registered primitives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import nn, ops
from .tensor import Tensor

DEFAULT_H = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), with a 1e-12 floor for all-zero gradients."""
    diff = float(np.linalg.norm(np.ravel(analytic) - np.ravel(numeric)))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-12)
    return diff / scale


def _scalarize(out: Tensor, proj: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return out.reshape(())
    return ops.sum(ops.mul(out, proj))


def check_function(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = DEFAULT_H,
                   rng: np.random.Generator | None = None,
                   entries: dict[int, np.ndarray] | None = None) -> float:
    """Max relative error between backprop and central differences over ``inputs``.

    Non-scalar outputs are contracted with a fixed random projection so every
    output element contributes. ``entries`` optionally restricts the check to
    a subset of flat indices per input position.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    proj = rng.standard_normal(out.shape) if out.size != 1 else None
    loss = _scalarize(out, proj)
    loss.backward()
    worst = 0.0
    for pos, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        idx = entries.get(pos) if entries else None
        idx = np.arange(flat.size) if idx is None else np.asarray(idx)
        analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)[idx]
        numeric = np.empty(idx.size)
        for j, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + h
            fp = _eval(fn, inputs, proj)
            flat[k] = orig - h
            fm = _eval(fn, inputs, proj)
            flat[k] = orig
            numeric[j] = (fp - fm) / (2 * h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _eval(fn, inputs, proj) -> float:
    from .tensor import no_grad
    with no_grad():
        out = fn(*inputs)
    return float(out.data.sum() if proj is None else (out.data * proj).sum())


# -- registry -------------------------------------------------------------------------

def _away_from(x: np.ndarray, points: Iterable[float], margin: float = 1e-2) -> np.ndarray:
    x = x.copy()
    for p in points:
        close = np.abs(x - p) < margin
        x[close] = p + np.where(x[close] >= p, margin, -margin) * 2
    return x


def _bilinear_case(rng):
    fmap = Tensor(rng.standard_normal((2, 4, 5, 3)))
    frac = rng.uniform(0.1, 0.9, size=(2, 6, 2))
    cell = rng.integers(0, 3, size=(2, 6, 2))
    px = (cell + frac + 0.5) / np.array([5, 4])
    return ops.bilinear_sample, [fmap, Tensor(px)]


def _mha_case(rng):
    q = Tensor(rng.standard_normal((2, 3, 8)))
    k = Tensor(rng.standard_normal((2, 3, 8)))
    v = Tensor(rng.standard_normal((2, 3, 8)))
    return (lambda a, b, c: nn.multi_head_attention(a, b, c, n_heads=2)), [q, k, v]


def _bn_case(training: bool):
    def build(rng):
        x = Tensor(rng.standard_normal((3, 4, 5)))
        w = Tensor(rng.uniform(0.5, 1.5, 5))
        b = Tensor(rng.standard_normal(5))
        rm, rv = rng.standard_normal(5) * 0.1, rng.uniform(0.5, 2.0, 5)

        def f(x, w, b):
            return ops.batch_norm(x, w, b, rm.copy(), rv.copy(), training=training)
        return f, [x, w, b]
    return build


def _focal_case(rng):
    p = Tensor(rng.uniform(0.05, 0.95, (4, 3)))
    t = (rng.uniform(size=(4, 3)) < 0.4).astype(float)
    return (lambda p: ops.focal_loss(p, t)), [p]


def _sigmoid_focal_case(rng):
    x = Tensor(rng.standard_normal((4, 3)) * 2)
    t = (rng.uniform(size=(4, 3)) < 0.4).astype(float)
    return (lambda x: ops.sigmoid_focal_loss(x, t)), [x]


def _l1_case(rng):
    a = rng.standard_normal((3, 4))
    b = a + _away_from(rng.standard_normal((3, 4)), [0.0], 0.05)
    target = b.copy()
    return (lambda p: ops.l1_loss(p, target)), [Tensor(a)]


def _getitem_case(rng):
    idx = np.array([0, 2, 2, 1])
    return (lambda a: ops.getitem(a, (idx, slice(1, 3)))), [Tensor(rng.standard_normal((3, 4)))]


OP_REGISTRY: dict[str, Callable[[np.random.Generator], tuple[Callable, list[Tensor]]]] = {
    "add": lambda r: (ops.add, [Tensor(r.standard_normal((3, 4))), Tensor(r.standard_normal((4,)))]),
    "sub": lambda r: (ops.sub, [Tensor(r.standard_normal((3, 1))), Tensor(r.standard_normal((3, 4)))]),
    "mul": lambda r: (ops.mul, [Tensor(r.standard_normal((2, 3))), Tensor(r.standard_normal((2, 3)))]),
    "div": lambda r: (ops.div, [Tensor(r.standard_normal((2, 3))), Tensor(r.uniform(0.5, 2.0, (2, 3)))]),
    "scale": lambda r: ((lambda a: ops.scale(a, 0.37)), [Tensor(r.standard_normal((5,)))]),
    "exp": lambda r: (ops.exp, [Tensor(r.standard_normal((2, 3)))]),
    "log": lambda r: (ops.log, [Tensor(r.uniform(0.5, 2.0, (2, 3)))]),
    "abs": lambda r: (ops.abs, [Tensor(_away_from(r.standard_normal((2, 3)), [0.0]))]),
    "relu": lambda r: (ops.relu, [Tensor(_away_from(r.standard_normal((3, 4)), [0.0]))]),
    "sigmoid": lambda r: (ops.sigmoid, [Tensor(r.standard_normal((3, 4)) * 3)]),
    "inverse_sigmoid": lambda r: (ops.inverse_sigmoid, [Tensor(r.uniform(0.05, 0.95, (3, 4)))]),
    "matmul": lambda r: (ops.matmul, [Tensor(r.standard_normal((2, 3, 4))), Tensor(r.standard_normal((4, 5)))]),
    "linear": lambda r: (ops.linear, [Tensor(r.standard_normal((2, 3, 4))), Tensor(r.standard_normal((5, 4))),
                                      Tensor(r.standard_normal(5))]),
    "reshape": lambda r: ((lambda a: ops.reshape(a, (4, 3))), [Tensor(r.standard_normal((2, 6)))]),
    "transpose": lambda r: ((lambda a: ops.transpose(a, (2, 0, 1))), [Tensor(r.standard_normal((2, 3, 4)))]),
    "broadcast_to": lambda r: ((lambda a: ops.broadcast_to(a, (3, 2, 4))), [Tensor(r.standard_normal((2, 1)))]),
    "getitem": _getitem_case,
    "concat": lambda r: ((lambda a, b: ops.concat([a, b], axis=1)),
                         [Tensor(r.standard_normal((2, 3))), Tensor(r.standard_normal((2, 2)))]),
    "stack": lambda r: ((lambda a, b: ops.stack([a, b], axis=1)),
                        [Tensor(r.standard_normal((2, 3))), Tensor(r.standard_normal((2, 3)))]),
    "sum": lambda r: ((lambda a: ops.sum(a, axis=1)), [Tensor(r.standard_normal((2, 3, 4)))]),
    "mean": lambda r: ((lambda a: ops.mean(a, axis=(0, 2))), [Tensor(r.standard_normal((2, 3, 4)))]),
    "softmax": lambda r: (ops.softmax, [Tensor(r.standard_normal((3, 5)))]),
    "layer_norm": lambda r: (ops.layer_norm, [Tensor(r.standard_normal((3, 6))), Tensor(r.uniform(0.5, 1.5, 6)),
                                              Tensor(r.standard_normal(6))]),
    "batch_norm_train": _bn_case(True),
    "batch_norm_eval": _bn_case(False),
    "l1_loss": _l1_case,
    "focal_loss": _focal_case,
    "sigmoid_focal_loss": _sigmoid_focal_case,
    "circular_conv1d": lambda r: (ops.circular_conv1d, [Tensor(r.standard_normal((2, 6, 3))),
                                                        Tensor(r.standard_normal((4, 3, 5))),
                                                        Tensor(r.standard_normal(4))]),
    "conv2d": lambda r: ((lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=1)),
                         [Tensor(r.standard_normal((2, 6, 6, 2))), Tensor(r.standard_normal((3, 3, 3, 2))),
                          Tensor(r.standard_normal(3))]),
    "sine_positional_encoding": lambda r: ((lambda p: ops.sine_positional_encoding(p, 16)),
                                           [Tensor(r.uniform(0, 1, (3, 2)))]),
    "bilinear_sample": _bilinear_case,
    "multi_head_attention": _mha_case,
}


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    seeds: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)


def check_op(name: str, seeds: Iterable[int] = range(10), tolerance: float = 1e-4,
             h: float = DEFAULT_H, registry=None) -> GradcheckResult:
    registry = OP_REGISTRY if registry is None else registry
    build = registry[name]
    worst, n = 0.0, 0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        fn, inputs = build(rng)
        worst = max(worst, check_function(fn, inputs, h=h, rng=rng))
        n += 1
    return GradcheckResult(name, worst, tolerance, n)
