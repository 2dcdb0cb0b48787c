"""Parameter containers and the layers the detector is assembled from."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import ops
from .tensor import ConfigError, Tensor


def Parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Minimal module tree: parameters, buffers and child modules by attribute."""

    def __init__(self):
        self.training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            full = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in vars(self).items():
            full = f"{prefix}{key}"
            if isinstance(value, np.ndarray) and key.startswith("running_"):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, p.data) for k, p in self.named_parameters())
        state.update((k, b) for k, b in self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        if missing:
            raise KeyError(f"missing entries in state: {sorted(missing)}")
        for k, p in own.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)
        for k, b in bufs.items():
            b[...] = state[k]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value.train(mode)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / math.sqrt(d_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(d_out, d_in)))
        self.bias = Parameter(rng.uniform(-bound, bound, size=d_out)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


class BatchNorm1d(Module):
    """Per-channel batch norm over all leading axes; running stats start at (0, 1)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ops.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class MLP(Module):
    """Stack of linear layers with ReLU between them."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, n_layers: int, rng: np.random.Generator):
        super().__init__()
        dims = [d_in] + [d_hidden] * (n_layers - 1) + [d_out]
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x


class CircularConv1d(Module):
    def __init__(self, d_in: int, d_out: int, kernel_size: int, rng: np.random.Generator):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigError(f"circular conv kernel size must be odd, got {kernel_size}")
        bound = 1.0 / math.sqrt(d_in * kernel_size)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(d_out, d_in, kernel_size)))
        self.bias = Parameter(np.zeros(d_out))

    def forward(self, x):
        return ops.circular_conv1d(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        super().__init__()
        bound = 1.0 / math.sqrt(c_in * kernel * kernel)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(c_out, kernel, kernel, c_in)))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


def multi_head_attention(q, k, v, n_heads: int) -> Tensor:
    """Scaled dot-product attention over axis -2 of already-projected inputs.

    ``q`` is ``[..., Lq, d]``, ``k`` and ``v`` are ``[..., Lk, d]``; heads are
    split from the last axis and concatenated back.
    """
    d = q.shape[-1]
    if d % n_heads:
        raise ConfigError(f"embedding dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    lead = q.shape[:-2]

    def split(t):
        t = t.reshape(t.shape[:-1] + (n_heads, dh))
        nd = t.ndim
        return t.transpose(tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))

    qh, kh, vh = split(q), split(k), split(v)
    nd = kh.ndim
    scores = ops.scale(qh @ kh.transpose(tuple(range(nd - 2)) + (nd - 1, nd - 2)), 1.0 / math.sqrt(dh))
    attn = ops.softmax(scores)
    out = attn @ vh  # [..., heads, Lq, dh]
    nd = out.ndim
    out = out.transpose(tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    return out.reshape(lead + (q.shape[-2], d))


class MultiheadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if d_model % n_heads:
            raise ConfigError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.q_proj = Linear(d_model, d_model, rng)
        self.k_proj = Linear(d_model, d_model, rng)
        self.v_proj = Linear(d_model, d_model, rng)
        self.out_proj = Linear(d_model, d_model, rng)

    def forward(self, query, key, value):
        out = multi_head_attention(self.q_proj(query), self.k_proj(key), self.v_proj(value), self.n_heads)
        return self.out_proj(out)
