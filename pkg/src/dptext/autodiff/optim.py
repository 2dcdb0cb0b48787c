from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        self.param_name = name
        super().__init__(f"non-finite gradient in parameter {name!r}; step aborted")


@dataclass
class AdamWState:
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: AdamWState, lr: float,
               betas: tuple[float, float] = (0.9, 0.999), weight_decay: float = 1e-4,
               eps: float = 1e-8) -> None:
    """One AdamW update in place, using each parameter's ``.grad``.

    All gradients are checked before any parameter is touched, so a NaN
    leaves the model and the moments unchanged.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(name)
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.exp_avg.setdefault(name, np.zeros_like(p.data))
        v = state.exp_avg_sq.setdefault(name, np.zeros_like(p.data))
        p.data = p.data * (1.0 - lr * weight_decay)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class AdamW:
    """Thin stateful wrapper around :func:`adamw_step` for named parameters."""

    def __init__(self, named_params, lr: float = 1e-4, betas=(0.9, 0.999), weight_decay: float = 1e-4):
        self.params = dict(named_params)
        self.lr = lr
        self.betas = betas
        self.weight_decay = weight_decay
        self.state = AdamWState()

    def step(self) -> None:
        adamw_step(self.params, self.state, self.lr, self.betas, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_grad_norm(params, max_norm: float) -> float:
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params)))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-6)
        for p in params:
            p.grad = p.grad * factor
    return total
