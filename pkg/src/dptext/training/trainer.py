"""AdamW training loop with periodic held-out evaluation and checkpointing."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..autodiff import AdamW, ConfigError, NonFiniteGradientError, clip_grad_norm, no_grad
from ..geometry import FMeasure, Polygon2D, match_counts, prf
from ..geometry.io import atomic_write_text
from ..model import Detector, ModelConfig, save_checkpoint
from .data import augment, build_split, load_dataset, make_batch, rotated_split
from .losses import LossWeights, detection_loss
from .matching import NonFiniteCostError
from .synth import SceneParams, SyntheticScene, resize_scene

log = logging.getLogger(__name__)

METRICS_HEADER = ["iteration", "split", "precision", "recall", "f_measure", "loss_cls", "loss_pt", "loss_total"]
LABEL_MODES = ("original", "positional")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, iteration: int, reason: str, checkpoint: str | None):
        self.iteration, self.checkpoint = iteration, checkpoint
        where = f"; last good weights in {checkpoint}" if checkpoint else ""
        super().__init__(f"training diverged at iteration {iteration}: {reason}{where}")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 8
    lr: float = 1e-4
    lr_decay_step: int = 1600
    lr_decay_factor: float = 0.1
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    grad_clip: float = 0.1
    seed: int = 0
    train_scenes: int = 500
    eval_scenes: int = 100
    eval_every: int = 250
    label_mode: str = "positional"
    rotation: bool = False
    train_inverse_prob: float = 0.03
    score_threshold: float = 0.5
    iou_threshold: float = 0.5
    eval_raster: int = 512
    train_data: str | None = None
    eval_data: str | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be positive, got {self.iterations}")
        if not 0 < self.lr_decay_step < self.iterations:
            raise ConfigError(f"lr_decay_step {self.lr_decay_step} must lie in (0, {self.iterations})")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be positive, got {self.eval_every}")
        if self.label_mode not in LABEL_MODES:
            raise ConfigError(f"label_mode must be one of {LABEL_MODES}, got {self.label_mode!r}")
        object.__setattr__(self, "betas", tuple(self.betas))

    def lr_at(self, iteration: int) -> float:
        return self.lr * (self.lr_decay_factor if iteration >= self.lr_decay_step else 1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EvalResult:
    fm: FMeasure
    loss_cls: float
    loss_pt: float
    loss_total: float


@dataclass
class TrainResult:
    model: Detector
    metrics: list[dict]
    train_loss: list[float]
    best_f: float
    best_iteration: int
    best_state: dict = field(repr=False, default_factory=dict)
    seconds: float = 0.0

    @property
    def final_f(self) -> float:
        return self.metrics[-1]["f_measure"]


def predict(model: Detector, images: np.ndarray, batch_size: int = 25):
    """Final-layer polygons (normalised) and scores per image, without a tape."""
    was_training = model.training
    model.eval()
    polys, scores = [], []
    with no_grad():
        for s in range(0, len(images), batch_size):
            out = model(images[s:s + batch_size]).final
            polys.extend(out.points.data)
            scores.extend(1.0 / (1.0 + np.exp(-out.logits.data)))
    model.train(was_training)
    return polys, scores


def detection_counts(points: np.ndarray, scores: np.ndarray, scene: SyntheticScene,
                     score_threshold: float, iou_threshold: float, raster: int) -> tuple[int, int, int]:
    keep = scores >= score_threshold
    w, h = scene.size
    preds = [Polygon2D(p * [w, h]) for p in points[keep]]
    gts = [a.polygon for a in scene.annotations]
    tp = match_counts(preds, scores[keep], gts, iou_threshold, raster)
    return tp, len(preds), len(gts)


def evaluate(model: Detector, scenes: list[SyntheticScene], label_mode: str = "positional",
             score_threshold: float = 0.5, iou_threshold: float = 0.5, raster: int = 512,
             weights: LossWeights | None = None, batch_size: int = 25) -> EvalResult:
    """Pooled P/R/F over ``scenes`` and the mean held-out loss (weighted components)."""
    w = weights or LossWeights()
    was_training = model.training
    model.eval()
    tp = n_pred = n_gt = 0
    sums = np.zeros(3)
    n_batches = 0
    with no_grad():
        for s in range(0, len(scenes), batch_size):
            chunk = scenes[s:s + batch_size]
            batch = make_batch(chunk, model.cfg.n_points, label_mode)
            out = model(batch.images)
            loss = detection_loss(out, batch.targets, w)
            sums += [w.cls * loss.classification, w.point * loss.point_l1, loss.total_value]
            n_batches += 1
            final = out.final
            probs = 1.0 / (1.0 + np.exp(-final.logits.data))
            for i, scene in enumerate(chunk):
                c = detection_counts(final.points.data[i], probs[i], scene, score_threshold, iou_threshold, raster)
                tp, n_pred, n_gt = tp + c[0], n_pred + c[1], n_gt + c[2]
    model.train(was_training)
    sums /= max(n_batches, 1)
    return EvalResult(prf(tp, n_pred, n_gt), *sums.tolist())


def scene_params(cfg: TrainConfig, model_cfg: ModelConfig, inverse_prob: float) -> SceneParams:
    return SceneParams(size=model_cfg.image_size, inverse_prob=inverse_prob)


def build_data(cfg: TrainConfig, model_cfg: ModelConfig) -> tuple[list, list]:
    """Training scenes and the held-out normal split (from paths, else generated from the seed)."""
    if cfg.train_data:
        train = [resize_scene(s, model_cfg.image_size) for s in load_dataset(cfg.train_data)]
    else:
        train = build_split(cfg.seed, "train", cfg.train_scenes,
                            scene_params(cfg, model_cfg, cfg.train_inverse_prob))
    if cfg.eval_data:
        held = [resize_scene(s, model_cfg.image_size) for s in load_dataset(cfg.eval_data)]
    else:
        held = build_split(cfg.seed, "normal", cfg.eval_scenes, scene_params(cfg, model_cfg, 0.03))
    return train, held


def test_splits(cfg: TrainConfig, model_cfg: ModelConfig) -> dict[str, list[SyntheticScene]]:
    """Normal, rotated (originals plus five large angles) and inverse-heavy test splits."""
    normal = build_split(cfg.seed, "normal", cfg.eval_scenes, scene_params(cfg, model_cfg, 0.03))
    return {
        "normal": normal,
        "rotated": rotated_split(normal, model_cfg.image_size),
        "inverse": build_split(cfg.seed, "inverse", cfg.eval_scenes, scene_params(cfg, model_cfg, 0.4)),
    }


def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, METRICS_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def train(cfg: TrainConfig, model_cfg: ModelConfig | None = None, out_dir=None,
          data: tuple[list, list] | None = None, weights: LossWeights | None = None,
          progress=None) -> TrainResult:
    """Train a detector; writes ``metrics.csv``, ``final.ckpt`` and ``best.ckpt`` to ``out_dir``.

    The model seed follows ``cfg.seed`` so one seed fixes data, init and
    batch order. ``progress(iteration, loss)`` is called after every step.
    """
    start = time.perf_counter()
    model_cfg = replace(model_cfg or ModelConfig(), seed=cfg.seed)
    w = weights or LossWeights()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    train_scenes, held = data if data is not None else build_data(cfg, model_cfg)
    if not train_scenes:
        raise ConfigError("training split is empty")
    model = Detector(model_cfg)
    model.train()
    opt = AdamW(model.named_parameters(), lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 7])
    n_pts = model_cfg.n_points
    cache = {}

    def sample(idx: int) -> SyntheticScene:
        scene = train_scenes[idx]
        return augment(scene, rng, model_cfg.image_size) if cfg.rotation else scene

    metrics, losses = [], []
    best_f, best_it, best_state = -1.0, 0, model.state_dict()

    def record(iteration: int) -> None:
        nonlocal best_f, best_it, best_state
        ev = evaluate(model, held, cfg.label_mode, cfg.score_threshold, cfg.iou_threshold,
                      cfg.eval_raster, w)
        metrics.append({"iteration": iteration, "split": "heldout", "precision": ev.fm.precision,
                        "recall": ev.fm.recall, "f_measure": ev.fm.f_measure, "loss_cls": ev.loss_cls,
                        "loss_pt": ev.loss_pt, "loss_total": ev.loss_total})
        log.info("iter %d  F=%.4f  P=%.4f  R=%.4f  loss=%.4f", iteration, ev.fm.f_measure,
                 ev.fm.precision, ev.fm.recall, ev.loss_total)
        if ev.fm.f_measure > best_f:
            best_f, best_it, best_state = ev.fm.f_measure, iteration, model.state_dict()
            if out:
                save_checkpoint(out / "best.ckpt", model, {"iteration": iteration, "f_measure": best_f,
                                                           "train_config": cfg.to_dict()})
        if out:
            atomic_write_text(out / "metrics.csv", metrics_csv(metrics))

    record(0)
    order = np.array([], dtype=np.int64)
    for it in range(cfg.iterations):
        if len(order) < cfg.batch_size:
            order = np.concatenate([order, rng.permutation(len(train_scenes))])
        idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
        if cfg.rotation:
            batch = make_batch([sample(int(i)) for i in idx], n_pts, cfg.label_mode)
            images, targets = batch.images, batch.targets
        else:
            for i in idx:
                if int(i) not in cache:
                    cache[int(i)] = make_batch([train_scenes[int(i)]], n_pts, cfg.label_mode).targets[0]
            images = np.stack([train_scenes[int(i)].image for i in idx])
            targets = [cache[int(i)] for i in idx]
        opt.zero_grad()
        value = float("nan")
        try:
            # non-finite outputs surface either in matching or in the loss value
            loss = detection_loss(model(images), targets, w)
            value = loss.total_value
            if not np.isfinite(value):
                raise NonFiniteGradientError("loss")
            loss.total.backward()
            if cfg.grad_clip > 0:
                clip_grad_norm(model.parameters(), cfg.grad_clip)
            opt.lr = cfg.lr_at(it)
            opt.step()
        except (NonFiniteGradientError, NonFiniteCostError) as exc:
            path = None
            if out:
                path = str(out / "last_good.ckpt")
                save_checkpoint(path, model, {"iteration": it, "train_config": cfg.to_dict()})
                atomic_write_text(out / "metrics.csv", metrics_csv(metrics))
            raise TrainingDivergedError(it, str(exc), path) from exc
        losses.append(value)
        if progress:
            progress(it, value)
        if (it + 1) % cfg.eval_every == 0:
            record(it + 1)
    if out:
        save_checkpoint(out / "final.ckpt", model, {"iteration": cfg.iterations, "train_config": cfg.to_dict()})
    return TrainResult(model, metrics, losses, best_f, best_it, best_state, time.perf_counter() - start)
