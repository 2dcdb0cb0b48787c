"""Self-verification suite: per-op gradient checks plus a tiny end-to-end model check."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import no_grad
from .autodiff.gradcheck import DEFAULT_H, OP_REGISTRY, GradcheckResult, check_op, relative_error
from .model import Detector, ModelConfig
from .training.losses import Target, detection_loss

# frozen tiny setting: 2 queries, 4 points, 16 channels, 32px input -> 4x4 features
TINY_MODEL = ModelConfig(d_model=16, n_heads=4, n_deform_points=2, n_encoder_layers=1, n_decoder_layers=2,
                         n_queries=2, n_points=4, efsa_neighborhood=2, d_ffn=32, image_size=32,
                         stem_channels=(4, 8))


def _tiny_problem(seed: int):
    rng = np.random.default_rng(seed)
    model = Detector(ModelConfig(**{**TINY_MODEL.to_dict(), "seed": seed}))
    # the structured init puts deformable samples exactly on the kinks of bilinear
    # interpolation (integer cell offsets); a small jitter moves the check to a generic point
    for _, p in sorted(model.named_parameters()):
        p.data = p.data + rng.normal(0.0, 0.05, p.data.shape)
    images = rng.uniform(0, 1, (2, TINY_MODEL.image_size, TINY_MODEL.image_size))
    centre = rng.uniform(0.3, 0.7, 2)
    half = rng.uniform(0.1, 0.2, 2)
    box = np.array([centre - half, [centre[0] + half[0], centre[1] - half[1]], centre + half,
                    [centre[0] - half[0], centre[1] + half[1]]])
    targets = [Target.from_points(box[None]), Target.from_points(np.zeros((0, 4, 2)))]
    return rng, model, images, targets


def model_gradcheck(seed: int, n_params: int = 20, h: float = DEFAULT_H) -> float:
    """Relative error of backprop vs central differences on ``n_params`` random weights."""
    rng, model, images, targets = _tiny_problem(seed)
    params = dict(model.named_parameters())
    names = sorted(params)
    sizes = np.array([params[n].data.size for n in names])
    flat = rng.choice(sizes.sum(), size=n_params, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = [(names[i], int(f - offsets[i])) for f in flat for i in [np.searchsorted(offsets, f, "right") - 1]]

    model.zero_grad()
    # proposals and inter-layer references are stop-gradient by design; hold them fixed
    frozen = model(images)
    detection_loss(model(images, frozen), targets).total.backward()
    analytic = np.array([params[n].grad.reshape(-1)[k] if params[n].grad is not None else 0.0
                         for n, k in picks])

    def loss_value() -> float:
        with no_grad():
            return detection_loss(model(images, frozen), targets).total_value

    numeric = np.empty(n_params)
    for j, (n, k) in enumerate(picks):
        data = params[n].data.reshape(-1)
        orig = data[k]
        data[k] = orig + h
        fp = loss_value()
        data[k] = orig - h
        fm = loss_value()
        data[k] = orig
        numeric[j] = (fp - fm) / (2 * h)
    return relative_error(analytic, numeric)


@dataclass
class SuiteReport:
    results: list[GradcheckResult]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        out = [f"{'PASS' if r.passed else 'FAIL'}  {r.name:<26} max_rel_err={r.max_rel_error:.3e}  "
               f"tol={r.tolerance:.0e}  seeds={r.seeds}" for r in self.results]
        n_fail = sum(not r.passed for r in self.results)
        out.append(f"{len(self.results) - n_fail}/{len(self.results)} passed in {self.seconds:.1f}s")
        return out


def run_suite(ops: list[str] | None = None, seed: int = 0, n_seeds: int = 10, tolerance: float = 1e-4,
              model_tolerance: float = 1e-3, include_model: bool = True, registry=None) -> SuiteReport:
    """Check the named ops (default: all registered) over ``n_seeds`` seeds starting at ``seed``."""
    registry = OP_REGISTRY if registry is None else registry
    names = list(registry) if ops is None else ops
    unknown = [n for n in names if n not in registry]
    if unknown:
        raise KeyError(f"unknown op(s) {unknown}; registered: {', '.join(registry)}")
    start = time.perf_counter()
    seeds = range(seed, seed + n_seeds)
    results = [check_op(n, seeds, tolerance, registry=registry) for n in names]
    if include_model:
        worst = max(model_gradcheck(s) for s in seeds)
        results.append(GradcheckResult("full_model_tiny", worst, model_tolerance, n_seeds))
    return SuiteReport(results, time.perf_counter() - start)
