"""Single-scale deformable attention and the factorized self-attention block."""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import (BatchNorm1d, CircularConv1d, ConfigError, LayerNorm, Linear, Module,
                        MultiheadAttention, Tensor, ops)


class DeformableAttention(Module):
    """Each query samples ``n_points`` locations per head around its reference point.

    Offsets are predicted in feature-cell units; attention weights are a
    softmax over the samples of one head.
    """

    def __init__(self, d_model: int, n_heads: int, n_points: int, rng: np.random.Generator):
        super().__init__()
        if d_model % n_heads:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.d_model, self.n_heads, self.n_points = d_model, n_heads, n_points
        self.sampling_offsets = Linear(d_model, n_heads * n_points * 2, rng)
        self.attention_weights = Linear(d_model, n_heads * n_points, rng)
        self.value_proj = Linear(d_model, d_model, rng)
        self.output_proj = Linear(d_model, d_model, rng)
        self.sampling_offsets.weight.data[:] = 0.0
        theta = np.arange(n_heads) * (2.0 * math.pi / n_heads)
        grid = np.stack([np.cos(theta), np.sin(theta)], -1)
        grid = grid / np.abs(grid).max(-1, keepdims=True)
        grid = np.repeat(grid[:, None, :], n_points, axis=1) * np.arange(1, n_points + 1)[None, :, None]
        self.sampling_offsets.bias.data[:] = grid.reshape(-1)
        self.attention_weights.weight.data[:] = 0.0
        self.attention_weights.bias.data[:] = 0.0

    def sampling(self, query) -> tuple[Tensor, Tensor]:
        """Raw offsets ``[B, Lq, H, S, 2]`` and weights ``[B, Lq, H, S]``."""
        b, lq, _ = query.shape
        h, s = self.n_heads, self.n_points
        offsets = self.sampling_offsets(query).reshape(b, lq, h, s, 2)
        weights = ops.softmax(self.attention_weights(query).reshape(b, lq, h, s))
        return offsets, weights

    def forward(self, query, reference_points, value, feature_shape: tuple[int, int]) -> Tensor:
        """query ``[B, Lq, d]``, reference_points ``[B, Lq, 2]``, value ``[B, H*W, d]``."""
        b, lq, d = query.shape
        fh, fw = feature_shape
        if value.shape[1] != fh * fw:
            raise ConfigError(f"value length {value.shape[1]} != {fh}x{fw}")
        h, s = self.n_heads, self.n_points
        dh = d // h
        v = self.value_proj(value).reshape(b, fh, fw, h, dh).transpose(0, 3, 1, 2, 4).reshape(b * h, fh, fw, dh)
        offsets, weights = self.sampling(query)
        norm = np.array([fw, fh], dtype=np.float64)
        ref = reference_points.reshape(b, lq, 1, 1, 2) if isinstance(reference_points, Tensor) \
            else Tensor(np.asarray(reference_points).reshape(b, lq, 1, 1, 2))
        loc = ref + offsets / norm  # [B, Lq, H, S, 2]
        loc = loc.transpose(0, 2, 1, 3, 4).reshape(b * h, lq * s, 2)
        sampled = ops.bilinear_sample(v, loc).reshape(b, h, lq, s, dh)
        w = weights.transpose(0, 2, 1, 3).reshape(b, h, lq, s, 1)
        out = ops.sum(sampled * w, axis=3)  # [B, H, Lq, dh]
        out = out.transpose(0, 2, 1, 3).reshape(b, lq, d)
        return self.output_proj(out)


class FactorizedSelfAttention(Module):
    """Intra-instance attention over N points, then inter-instance attention over K.

    With ``enhanced=True`` a circular-convolution branch runs beside the
    intra attention and the two are fused with the content shortcut.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, enhanced: bool = True,
                 kernel_size: int = 5, conv_layers: int = 1):
        super().__init__()
        self.enhanced = enhanced
        self.kernel_size = kernel_size
        self.intra = MultiheadAttention(d_model, n_heads, rng)
        self.inter = MultiheadAttention(d_model, n_heads, rng)
        self.inter_norm = LayerNorm(d_model)
        if enhanced:
            self.convs = [CircularConv1d(d_model, d_model, kernel_size, rng) for _ in range(conv_layers)]
            self.bns = [BatchNorm1d(d_model) for _ in range(conv_layers)]
            self.mix_norm = LayerNorm(d_model)
            self.fc = Linear(d_model, d_model, rng)
            self.fuse_norm = LayerNorm(d_model)
        else:
            self.intra_norm = LayerNorm(d_model)

    def local_branch(self, q) -> Tensor:
        """ReLU(BN(CirConv(q))) over the point axis of ``[B, K, N, d]``."""
        if q.shape[-2] < self.kernel_size:
            raise ConfigError(f"circular kernel {self.kernel_size} exceeds {q.shape[-2]} points")
        for conv, bn in zip(self.convs, self.bns):
            q = ops.relu(bn(conv(q)))
        return q

    def forward(self, content, positional) -> Tensor:
        """content, positional ``[B, K, N, d]`` -> queries for cross-attention."""
        q = content + positional
        q_intra = self.intra(q, q, content)
        if self.enhanced:
            q_local = self.local_branch(q)
            fused = self.fuse_norm(self.fc(content + self.mix_norm(q_intra + q_local)))
        else:
            fused = self.intra_norm(content + q_intra)
        x = (fused + positional).transpose(0, 2, 1, 3)  # [B, N, K, d]
        inter = self.inter(x, x, x).transpose(0, 2, 1, 3)
        return self.inter_norm(fused + inter)
