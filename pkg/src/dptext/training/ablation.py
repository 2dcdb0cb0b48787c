"""Ablation grids: train each configuration over shared seeds and compare.

Finished runs are cached on disk, keyed by a hash of the resolved training
and model configs, so grids that share a configuration train it once.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..geometry.io import atomic_write_text, dump_json
from ..model import ModelConfig
from .trainer import TrainConfig, evaluate, metrics_csv, test_splits, train

log = logging.getLogger(__name__)

SPLITS = ("normal", "rotated", "inverse")
# bump when a change would alter cached results
CACHE_VERSION = 1


@dataclass(frozen=True)
class AblationSpec:
    query_mode: str = "explicit_point"
    efsa_mode: str = "efsa"
    label_mode: str = "positional"
    rotation: bool = True

    @property
    def name(self) -> str:
        return f"{self.query_mode}-{self.efsa_mode}-{self.label_mode}-{'rot' if self.rotation else 'norot'}"

    def apply(self, train_cfg: TrainConfig, model_cfg: ModelConfig) -> tuple[TrainConfig, ModelConfig]:
        return (replace(train_cfg, label_mode=self.label_mode, rotation=self.rotation),
                replace(model_cfg, query_mode=self.query_mode, efsa_mode=self.efsa_mode))


def default_grid(rotation: bool = True) -> list[AblationSpec]:
    """2 query modes x 2 self-attention modes x 2 label modes at one rotation setting."""
    return [AblationSpec(q, e, lab, rotation)
            for q, e, lab in itertools.product(("box_baseline", "explicit_point"), ("fsa", "efsa"),
                                               ("original", "positional"))]


@dataclass
class RunRecord:
    """Outcome of one (config, seed) training run."""

    key: str
    metrics: list[dict]
    split_f: dict[str, float]
    best_f: float
    seconds: float
    directory: Path | None = None

    @property
    def iterations(self) -> np.ndarray:
        return np.array([m["iteration"] for m in self.metrics], dtype=np.float64)

    @property
    def f_curve(self) -> np.ndarray:
        return np.array([m["f_measure"] for m in self.metrics])

    def train_loss(self) -> np.ndarray:
        data = np.loadtxt(self.directory / "train_loss.csv", delimiter=",", skiprows=1, ndmin=2)
        return data[:, 1]

    @property
    def checkpoint(self) -> Path | None:
        return self.directory / "final.ckpt" if self.directory else None


def run_key(train_cfg: TrainConfig, model_cfg: ModelConfig) -> str:
    payload = json.dumps({"v": CACHE_VERSION, "train": train_cfg.to_dict(), "model": model_cfg.to_dict()},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def convergence_auc(iterations: np.ndarray, f: np.ndarray) -> float:
    """Area under the F-vs-iteration curve, normalised by the iteration span."""
    span = iterations[-1] - iterations[0]
    return float(np.trapezoid(f, iterations) / span) if span > 0 else float(f[-1])


def iterations_to_reach(iterations: np.ndarray, f: np.ndarray, target: float) -> float | None:
    """First evaluated iteration at which ``f >= target``; None if never reached."""
    hit = np.nonzero(f >= target)[0]
    return float(iterations[hit[0]]) if len(hit) else None


def _read_metrics(path: Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: (int(v) if k == "iteration" else v if k == "split" else float(v))
                         for k, v in row.items()})
    return rows


def run_or_load(train_cfg: TrainConfig, model_cfg: ModelConfig, cache_dir=None,
                progress=None) -> RunRecord:
    """Train and test one configuration, reusing a cached result when present."""
    model_cfg = replace(model_cfg, seed=train_cfg.seed)
    key = run_key(train_cfg, model_cfg)
    run_dir = Path(cache_dir) / key if cache_dir else None
    summary_path = run_dir / "summary.json" if run_dir else None
    if summary_path is not None and summary_path.exists():
        summary = json.loads(summary_path.read_text())
        return RunRecord(key, _read_metrics(run_dir / "metrics.csv"), summary["split_f"], summary["best_f"],
                         summary["seconds"], run_dir)
    log.info("training %s (%s seed %d)", key, model_cfg.query_mode, train_cfg.seed)
    result = train(train_cfg, model_cfg, out_dir=run_dir, progress=progress)
    split_f = {}
    for split, scenes in test_splits(train_cfg, model_cfg).items():
        ev = evaluate(result.model, scenes, train_cfg.label_mode, train_cfg.score_threshold,
                      train_cfg.iou_threshold, train_cfg.eval_raster)
        split_f[split] = ev.fm.f_measure
    record = RunRecord(key, result.metrics, split_f, result.best_f, result.seconds, run_dir)
    if run_dir:
        atomic_write_text(run_dir / "config.json", dump_json({"train": train_cfg.to_dict(),
                                                              "model": model_cfg.to_dict()}))
        atomic_write_text(run_dir / "train_loss.csv", "iteration,loss_total\n"
                          + "".join(f"{i},{v:.17g}\n" for i, v in enumerate(result.train_loss)))
        atomic_write_text(summary_path, dump_json({"split_f": split_f, "best_f": result.best_f,
                                                   "seconds": result.seconds}))
    return record


@dataclass
class AblationRow:
    spec: AblationSpec
    seeds: list[int]
    runs: list[RunRecord] = field(repr=False)

    def mean_f(self, split: str) -> float:
        return float(np.mean([r.split_f[split] for r in self.runs]))

    @property
    def auc(self) -> float:
        return float(np.mean([convergence_auc(r.iterations, r.f_curve) for r in self.runs]))

    def mean_curve(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        curves = np.stack([r.f_curve for r in self.runs])
        return self.runs[0].iterations, curves.mean(0), curves.std(0)


SUMMARY_HEADER = ["config", "query_mode", "efsa_mode", "label_mode", "rotation", "seeds",
                  "f_normal", "f_rotated", "f_inverse", "auc"]


def summary_rows(rows: list[AblationRow]) -> list[dict]:
    out = []
    for row in rows:
        s = row.spec
        out.append({"config": s.name, "query_mode": s.query_mode, "efsa_mode": s.efsa_mode,
                    "label_mode": s.label_mode, "rotation": int(s.rotation),
                    "seeds": " ".join(map(str, row.seeds)),
                    **{f"f_{k}": round(row.mean_f(k), 4) for k in SPLITS}, "auc": round(row.auc, 4)})
    return out


def summary_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, SUMMARY_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(summary_rows(rows))
    return buf.getvalue()


def summary_text(rows: list[AblationRow]) -> str:
    """Fixed-width table of the summary rows."""
    table = [SUMMARY_HEADER] + [[str(v) for v in r.values()] for r in summary_rows(rows)]
    widths = [max(len(line[i]) for line in table) for i in range(len(SUMMARY_HEADER))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def ablate(specs: list[AblationSpec], seeds: list[int], train_cfg: TrainConfig, model_cfg: ModelConfig,
           out_dir=None, cache_dir=None, figures: bool = True) -> list[AblationRow]:
    """Run every spec over every seed; write per-config CSVs, the summary and figures."""
    out = Path(out_dir) if out_dir else None
    rows = []
    for spec in specs:
        t_cfg, m_cfg = spec.apply(train_cfg, model_cfg)
        runs = [run_or_load(replace(t_cfg, seed=s), m_cfg, cache_dir) for s in seeds]
        rows.append(AblationRow(spec, list(seeds), runs))
        if out:
            for s, run in zip(seeds, runs):
                atomic_write_text(out / spec.name / f"seed{s}_metrics.csv", metrics_csv(run.metrics))
    if out:
        atomic_write_text(out / "summary.csv", summary_csv(rows))
        atomic_write_text(out / "summary.txt", summary_text(rows))
        if figures:
            from ..report import plot_convergence, plot_split_bars

            plot_convergence({r.spec.name: r.mean_curve() for r in rows}, out / "convergence.png")
            plot_split_bars(summary_rows(rows), out / "splits.png")
    return rows


__all__ = ["AblationSpec", "AblationRow", "RunRecord", "default_grid", "ablate", "run_or_load", "run_key",
           "convergence_auc", "iterations_to_reach", "summary_csv", "summary_text", "summary_rows"]
