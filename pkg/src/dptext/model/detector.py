"""Conv stem, deformable encoder with two-stage proposals, and the point-query decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import (ConfigError, Conv2d, LayerNorm, Linear, MLP, Module, Parameter, Tensor, ops)
from .attention import DeformableAttention, FactorizedSelfAttention
from .config import ModelConfig
from .queries import BoxQueryEncoder, PointQueryEncoder, point_update, prior_points_sampling

PRIOR_PROB = 0.01


def grid_centres(h: int, w: int) -> np.ndarray:
    """Normalised (x, y) of every feature cell centre, row-major, ``[h*w, 2]``."""
    ys, xs = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=-1)


@dataclass
class Proposals:
    """Top-K anchor boxes per image (detached)."""

    boxes: np.ndarray  # [B, K, 4] cx, cy, w, h in [0, 1]
    scores: np.ndarray  # [B, K] objectness logits
    indices: np.ndarray  # [B, K] memory positions


@dataclass
class LayerOutput:
    logits: Tensor  # [B, K]
    points: Tensor  # [B, K, N, 2]
    reference: np.ndarray  # [B, K, N, 2] reference points used by this layer


@dataclass
class DetectionOutput:
    layers: list[LayerOutput]
    enc_logits: Tensor  # [B, HW]
    enc_boxes: Tensor  # [B, HW, 4]
    proposals: Proposals

    @property
    def final(self) -> LayerOutput:
        return self.layers[-1]


class Stem(Module):
    """Three stride-2 3x3 convolutions standing in for a backbone."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        c1, c2 = cfg.stem_channels
        self.convs = [Conv2d(1, c1, 3, rng, stride=2, padding=1),
                      Conv2d(c1, c2, 3, rng, stride=2, padding=1),
                      Conv2d(c2, cfg.d_model, 3, rng, stride=2, padding=1)]
        self.norm = LayerNorm(cfg.d_model)

    def forward(self, images) -> Tensor:
        x = images.reshape(images.shape + (1,))
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = ops.relu(x)
        return self.norm(x)


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.attn = DeformableAttention(cfg.d_model, cfg.n_heads, cfg.n_deform_points, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ffn = MLP(cfg.d_model, cfg.d_ffn, cfg.d_model, 2, rng)
        self.norm2 = LayerNorm(cfg.d_model)

    def forward(self, src, pos, refs, shape) -> Tensor:
        src = self.norm1(src + self.attn(src + pos, refs, src, shape))
        return self.norm2(src + self.ffn(src))


class Encoder(Module):
    """Deformable self-attention encoder plus the two-stage proposal heads."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.n_encoder_layers)]
        self.pos_proj = Linear(cfg.d_model, cfg.d_model, rng)
        self.out_proj = Linear(cfg.d_model, cfg.d_model, rng)
        self.out_norm = LayerNorm(cfg.d_model)
        self.objectness = Linear(cfg.d_model, 1, rng)
        self.objectness.bias.data[:] = -np.log((1 - PRIOR_PROB) / PRIOR_PROB)
        self.size_head = MLP(cfg.d_model, cfg.d_model, 2, 2, rng)
        self.size_head.layers[-1].weight.data[:] = 0.0
        self.size_head.layers[-1].bias.data[:] = 0.0

    def forward(self, features) -> tuple[Tensor, Tensor, Tensor, tuple[int, int]]:
        """features ``[B, H, W, d]`` -> memory, objectness logits, boxes, shape."""
        b, fh, fw, d = features.shape
        centres = grid_centres(fh, fw)
        pos = self.pos_proj(Tensor(ops.sine_positional_encoding(centres, d).data))
        src = features.reshape(b, fh * fw, d)
        refs = Tensor(np.broadcast_to(centres, (b, fh * fw, 2)).copy())
        for layer in self.layers:
            src = layer(src, pos, refs, (fh, fw))
        out = self.out_norm(self.out_proj(src))
        logits = self.objectness(out).reshape(b, fh * fw)
        init = np.log(self.cfg.init_box_size / (1 - self.cfg.init_box_size))
        wh = ops.sigmoid(self.size_head(out) + init)
        xy = Tensor(np.broadcast_to(centres, (b, fh * fw, 2)).copy())
        boxes = ops.concat([xy, wh], axis=-1)
        return src, logits, boxes, (fh, fw)

    def select(self, logits: Tensor, boxes: Tensor, k: int) -> Proposals:
        n_pos = logits.shape[1]
        if k > n_pos:
            raise ConfigError(f"K={k} exceeds {n_pos} memory positions")
        order = np.argsort(-logits.data, axis=1, kind="stable")[:, :k]
        rows = np.arange(logits.shape[0])[:, None]
        box = np.clip(boxes.data[rows, order], 0.0, 1.0)
        return Proposals(box, logits.data[rows, order], order)


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.self_attn = FactorizedSelfAttention(cfg.d_model, cfg.n_heads, rng,
                                                 enhanced=cfg.efsa_mode == "efsa",
                                                 kernel_size=cfg.kernel_size,
                                                 conv_layers=cfg.efsa_conv_layers)
        self.cross_attn = DeformableAttention(cfg.d_model, cfg.n_heads, cfg.n_deform_points, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ffn = MLP(cfg.d_model, cfg.d_ffn, cfg.d_model, 2, rng)
        self.norm2 = LayerNorm(cfg.d_model)

    def forward(self, content, positional, refs, memory, shape) -> Tensor:
        b, k, n, d = content.shape
        q = self.self_attn(content, positional)
        cross = self.cross_attn((q + positional).reshape(b, k * n, d), refs.reshape(b, k * n, 2),
                                memory, shape).reshape(b, k, n, d)
        q = self.norm1(q + cross)
        return self.norm2(q + self.ffn(q))


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        d, n = cfg.d_model, cfg.n_points
        self.content = Parameter(rng.normal(0.0, 1.0, size=(n, d)))
        if cfg.query_mode == "explicit_point":
            self.point_encoder = PointQueryEncoder(d, rng)
        else:
            self.box_encoder = BoxQueryEncoder(d, rng)
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.n_decoder_layers)]
        self.class_heads = [Linear(d, 1, rng) for _ in range(cfg.n_decoder_layers)]
        self.point_heads = [MLP(d, d, 2, 3, rng) for _ in range(cfg.n_decoder_layers)]
        for head in self.class_heads:
            head.bias.data[:] = -np.log((1 - PRIOR_PROB) / PRIOR_PROB)
        for head in self.point_heads:
            head.layers[-1].weight.data[:] = 0.0
            head.layers[-1].bias.data[:] = 0.0

    def forward(self, proposals: Proposals, memory, shape, references=None) -> list[LayerOutput]:
        """``references`` optionally replaces each layer's (detached) reference points."""
        cfg = self.cfg
        b, k = proposals.boxes.shape[:2]
        n, d = cfg.n_points, cfg.d_model
        content = ops.broadcast_to(self.content, (b, k, n, d))
        explicit = cfg.query_mode == "explicit_point"
        if explicit:
            points = prior_points_sampling(proposals.boxes, n)
        else:
            centre = np.broadcast_to(proposals.boxes[:, :, None, :2], (b, k, n, 2)).copy()
            positional = self.box_encoder(Tensor(proposals.boxes), n)
            points = centre
        outputs = []
        for li, (layer, cls_head, pt_head) in enumerate(zip(self.layers, self.class_heads, self.point_heads)):
            if references is not None:
                points = references[li]
            if explicit:
                positional = self.point_encoder(Tensor(points))
            content = layer(content, positional, Tensor(points), memory, shape)
            logits = cls_head(ops.mean(content, axis=2)).reshape(b, k)
            offsets = pt_head(content)
            new_points = point_update(Tensor(points), offsets)
            outputs.append(LayerOutput(logits, new_points, points))
            if explicit:
                # the next layer refines a detached estimate
                points = new_points.data.copy()
        return outputs


class Detector(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.stem = Stem(cfg, rng)
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)

    def forward(self, images, frozen: DetectionOutput | None = None) -> DetectionOutput:
        """Run the detector; ``frozen`` reuses another output's detached quantities
        (proposals and inter-layer reference points), which makes the loss an
        ordinary differentiable function for finite-difference checks."""
        images = images if isinstance(images, Tensor) else Tensor(images)
        feats = self.stem(images)
        memory, logits, boxes, shape = self.encoder(feats)
        if frozen is None:
            proposals = self.encoder.select(logits, boxes, self.cfg.n_queries)
            layers = self.decoder(proposals, memory, shape)
        else:
            proposals = frozen.proposals
            layers = self.decoder(proposals, memory, shape, [lay.reference for lay in frozen.layers])
        return DetectionOutput(layers, logits, boxes, proposals)
