"""``dptext`` command line: data generation, canonicalization, training, evaluation,
ablation, gradient self-checks and manifest replay.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import ConfigError
from .geometry import (ROT_TEST_ANGLES, TRAIN_ROTATION_ANGLES, INVERSE_ROTATION, AnnotationFormatError,
                       DegenerateGeometryError, canonicalize_positional_label, read_annotations, start_moved,
                       write_annotations)
from .geometry.io import atomic_write_text, dump_json
from .model import ModelConfig
from .model.checkpoint import CheckpointError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "DPTEXT_SEED"
MANIFEST = "manifest.json"

log = logging.getLogger("dptext")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- manifests --------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    version: str = __version__
    inputs: list[str] = field(default_factory=list)
    outputs: dict[str, str] = field(default_factory=dict)  # relative path -> sha256
    duration_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            d = json.loads(Path(path).read_text())
            return cls(**d)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise AnnotationFormatError(f"{path}: not a run manifest ({exc})") from None


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def hash_outputs(root: Path, exclude: tuple[str, ...] = (MANIFEST,)) -> dict[str, str]:
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.name not in exclude
                   and not p.name.startswith("."))
    return {str(p.relative_to(root)): sha256_file(p) for p in files}


def write_manifest(path: Path, manifest: RunManifest) -> None:
    atomic_write_text(path, dump_json(manifest.to_dict()))


# -- seeds and config resolution --------------------------------------------------------

def resolve_seed(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


def _flatten_config(raw: dict) -> dict:
    """Accept either ``{"train": {...}, "model": {...}}`` or one flat mapping."""
    flat = {}
    for key, value in raw.items():
        if key in ("train", "model") and isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    return flat


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise AnnotationFormatError(f"{path}: {exc.strerror}") from None
    if not isinstance(raw, dict):
        raise AnnotationFormatError(f"{path}: config must be a JSON object")
    return _flatten_config(raw)


# flag dest -> config key
FLAG_KEYS = {
    "query_mode": "query_mode", "efsa": "efsa_mode", "label_mode": "label_mode", "rotation": "rotation",
    "seed": "seed", "iterations": "iterations", "lr": "lr", "lr_decay_step": "lr_decay_step",
    "batch_size": "batch_size", "eval_every": "eval_every", "train_scenes": "train_scenes",
    "eval_scenes": "eval_scenes", "inverse_prob": "train_inverse_prob", "train_data": "train_data",
    "eval_data": "eval_data",
}


def merge_flags(config: dict, args, config_path: str | None) -> dict:
    """Overlay explicit flags on the config file; disagreeing values are an error
    unless ``--allow-override`` is given, in which case the flag wins."""
    merged = dict(config)
    conflicts = []
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if key == "rotation":
            value = value == "on"
        if key in config and config[key] != value:
            conflicts.append(f"{key}: config file {config_path} says {config[key]!r}, flag --"
                             f"{dest.replace('_', '-')} says {value!r}")
        merged[key] = value
    if conflicts and not getattr(args, "allow_override", False):
        raise UsageError("conflicting settings (pass --allow-override to let flags win):\n  "
                         + "\n  ".join(conflicts))
    for c in conflicts:
        log.warning("flag overrides config: %s", c)
    return merged


def split_configs(merged: dict):
    from .training import TrainConfig

    t_names = {f.name for f in fields(TrainConfig)}
    m_names = {f.name for f in fields(ModelConfig)} - {"seed"}
    unknown = set(merged) - t_names - m_names
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    t = TrainConfig(**{k: v for k, v in merged.items() if k in t_names})
    m = ModelConfig(**{k: v for k, v in merged.items() if k in m_names})
    return t, m


def _prepare_out(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .training.data import save_dataset, scene_seeds
    from .training.synth import SceneParams, generate_synthetic_scene, rotate_scene

    if args.scenes < 0:
        raise UsageError("--scenes must be non-negative")
    if not 0.0 <= args.inverse_prob <= 1.0:
        raise UsageError("--inverse-prob must lie in [0, 1]")
    seed = resolve_seed(args.seed)
    out = _prepare_out(args.out, args.force)
    params = SceneParams(size=args.size, inverse_prob=args.inverse_prob, mirror_prob=args.mirror_prob)
    angles = {"none": (), "train-set": TRAIN_ROTATION_ANGLES + (INVERSE_ROTATION,),
              "rot-test-set": ROT_TEST_ANGLES}[args.rotation]
    scenes = []
    for s in scene_seeds(seed, "train", args.scenes):
        scene = generate_synthetic_scene(s, params)
        scenes.append(scene)
        scenes.extend(rotate_scene(scene, a) for a in angles)
    save_dataset(out, scenes, {"params": params.to_dict(), "rotation": args.rotation, "seed": seed})
    print(f"wrote {len(scenes)} images and {sum(len(s.annotations) for s in scenes)} annotations to {out}")
    return EXIT_OK


def cmd_canonicalize(args) -> int:
    records = read_annotations(args.inp)
    moved = total = skipped = 0
    for rec in records:
        kept = []
        for ann in rec.annotations:
            try:
                new = canonicalize_positional_label(ann.polygon, clockwise_only=args.mode == "clockwise-only")
            except DegenerateGeometryError as exc:
                log.warning("image %s instance %s skipped: %s", rec.id, ann.instance_id, exc)
                skipped += 1
                continue
            total += 1
            moved += start_moved(ann.polygon, new)
            kept.append(replace(ann, polygon=new))
        rec.annotations = kept
    write_annotations(args.out, records)
    pct = 100.0 * moved / total if total else 0.0
    print(f"canonicalized {total} polygons ({args.mode}): {moved} start points moved ({pct:.1f}%), "
          f"{skipped} degenerate skipped")
    return EXIT_OK


def cmd_train(args) -> int:
    from .report import plot_convergence, plot_loss
    from .training import train

    merged = merge_flags(load_config(args.config), args, args.config)
    merged.setdefault("seed", resolve_seed(None))
    t_cfg, m_cfg = split_configs(merged)
    out = _prepare_out(args.out, args.force)
    result = train(t_cfg, m_cfg, out_dir=out)
    atomic_write_text(out / "train_loss.csv",
                      "iteration,loss_total\n" + "".join(f"{i},{v:.8f}\n" for i, v in enumerate(result.train_loss)))
    its = np.array([m["iteration"] for m in result.metrics], dtype=float)
    f = np.array([m["f_measure"] for m in result.metrics])
    plot_convergence({"held-out": (its, f, np.zeros_like(f))}, out / "convergence.png")
    plot_loss(result.train_loss, out / "loss.png")
    atomic_write_text(out / "config.json", dump_json({"train": t_cfg.to_dict(), "model": m_cfg.to_dict()}))
    print(f"final held-out F={result.final_f:.4f}  best F={result.best_f:.4f} at iteration "
          f"{result.best_iteration}  ({result.seconds:.0f}s)")
    return EXIT_OK


def _eval_scenes(args, t_cfg, m_cfg):
    from .training.data import build_split, load_dataset, rotated_split
    from .training.synth import resize_scene
    from .training.trainer import scene_params

    if args.data:
        return [resize_scene(s, m_cfg.image_size) for s in load_dataset(args.data)]
    if args.split == "train":
        return build_split(t_cfg.seed, "train", t_cfg.train_scenes,
                           scene_params(t_cfg, m_cfg, t_cfg.train_inverse_prob))
    normal = build_split(t_cfg.seed, "normal", t_cfg.eval_scenes, scene_params(t_cfg, m_cfg, 0.03))
    if args.split == "normal":
        return normal
    if args.split == "rotated":
        return rotated_split(normal, m_cfg.image_size)
    return build_split(t_cfg.seed, "inverse", t_cfg.eval_scenes, scene_params(t_cfg, m_cfg, 0.4))


def cmd_eval(args) -> int:
    from .model import load_checkpoint
    from .report import plot_scene
    from .training import TrainConfig, evaluate, predict

    model, extra = load_checkpoint(args.checkpoint)
    t_cfg = TrainConfig.from_dict(extra["train_config"]) if "train_config" in extra else TrainConfig()
    if args.label_mode:
        t_cfg = replace(t_cfg, label_mode=args.label_mode)
    scenes = _eval_scenes(args, t_cfg, model.cfg)
    ev = evaluate(model, scenes, t_cfg.label_mode, args.score_threshold, args.iou_threshold, args.raster)
    fm = ev.fm
    out = _prepare_out(args.out, args.force)
    split = "custom" if args.data else args.split
    atomic_write_text(out / "eval.csv",
                      "split,iou_threshold,precision,recall,f_measure,true_positives,n_predictions,n_ground_truth\n"
                      f"{split},{args.iou_threshold},{fm.precision:.6f},{fm.recall:.6f},{fm.f_measure:.6f},"
                      f"{fm.true_positives},{fm.n_predictions},{fm.n_ground_truth}\n")
    if scenes:
        polys, scores = predict(model, np.stack([scenes[0].image]))
        keep = scores[0] >= args.score_threshold
        w, h = scenes[0].size
        plot_scene(scenes[0].image, [p * [w, h] for p in polys[0][keep]], out / "sample.png",
                   scores=scores[0][keep], truth=[a.polygon.points for a in scenes[0].annotations])
    print(f"{split}: P={fm.precision:.4f} R={fm.recall:.4f} F={fm.f_measure:.4f} "
          f"(tp={fm.true_positives}, preds={fm.n_predictions}, gts={fm.n_ground_truth})")
    return EXIT_OK


def parse_grid(text: str | None, rotation: bool):
    from .training.ablation import AblationSpec, default_grid

    if not text or text == "default":
        return default_grid(rotation)
    specs = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 3:
            raise UsageError(f"grid entry {item!r} must be query_mode:efsa_mode:label_mode")
        specs.append(AblationSpec(parts[0], parts[1], parts[2], rotation))
    return specs


def cmd_ablate(args) -> int:
    from .training.ablation import ablate, summary_text

    merged = merge_flags(load_config(args.config), args, args.config)
    rotation = merged.pop("rotation", True)
    merged.pop("seed", None)
    t_cfg, m_cfg = split_configs(merged)
    specs = parse_grid(args.grid, rotation)
    for s in specs:
        s.apply(t_cfg, m_cfg)  # validates mode names early
        ModelConfig(**{**m_cfg.to_dict(), "query_mode": s.query_mode, "efsa_mode": s.efsa_mode})
        if s.label_mode not in ("original", "positional"):
            raise UsageError(f"unknown label mode {s.label_mode!r}")
    out = _prepare_out(args.out, args.force)
    seeds = args.seeds if args.seeds else [resolve_seed(None)]
    rows = ablate(specs, seeds, t_cfg, m_cfg, out_dir=out, cache_dir=args.cache)
    print(summary_text(rows), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .selfcheck import run_suite

    ops = None if args.ops == "all" else [o.strip() for o in args.ops.split(",") if o.strip()]
    try:
        report = run_suite(ops, seed=resolve_seed(args.seed), n_seeds=args.n_seeds, tolerance=args.tolerance,
                           model_tolerance=args.model_tolerance, include_model=not args.skip_model,
                           registry=GRADCHECK_REGISTRY)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    text = "\n".join(report.lines()) + "\n"
    print(text, end="")
    if args.out:
        out = _prepare_out(args.out, args.force)
        atomic_write_text(out / "gradcheck.txt", "\n".join(report.lines()[:-1]) + "\n")
    return EXIT_OK if report.passed else EXIT_NUMERIC


# tests may swap in a registry with a deliberately broken op
GRADCHECK_REGISTRY = None


def cmd_replay(args) -> int:
    manifest = RunManifest.read(args.manifest)
    argv = list(manifest.config["argv"])
    if args.out:
        argv = _replace_out(argv, args.out)
    code = main(argv)
    if code != EXIT_OK or not args.check:
        return code
    out = Path(args.out) if args.out else Path(manifest.config["out"])
    if manifest.command == "canonicalize":
        fresh = {out.name: sha256_file(out)}
    else:
        fresh = hash_outputs(out)
    if fresh != manifest.outputs:
        diff = sorted(set(fresh.items()) ^ set(manifest.outputs.items()))
        print(f"replay mismatch in {len({k for k, _ in diff})} file(s): "
              + ", ".join(sorted({k for k, _ in diff})), file=sys.stderr)
        return EXIT_DATA
    print(f"replay reproduced {len(fresh)} output file(s) byte-identically")
    return EXIT_OK


def _replace_out(argv: list[str], new_out: str) -> list[str]:
    argv = list(argv)
    if "--out" in argv:
        argv[argv.index("--out") + 1] = new_out
    if "--force" not in argv:
        argv.append("--force")
    return argv


# -- parser -----------------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--config", help="JSON config ({'train': {...}, 'model': {...}} or flat)")
    p.add_argument("--query-mode", choices=["box_baseline", "explicit_point"])
    p.add_argument("--efsa", choices=["fsa", "efsa"])
    p.add_argument("--label-mode", choices=["original", "positional"])
    p.add_argument("--rotation", choices=["on", "off"])
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay-step", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--train-scenes", type=int)
    p.add_argument("--eval-scenes", type=int)
    p.add_argument("--inverse-prob", type=float, help="inverse probability of generated training scenes")
    p.add_argument("--train-data", help="dataset directory from gen-data (default: generate from the seed)")
    p.add_argument("--eval-data", help="held-out dataset directory")
    p.add_argument("--allow-override", action="store_true", help="let flags win over conflicting config values")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dptext", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"dptext {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset (PGM images + annotation JSON)")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--inverse-prob", type=float, default=0.03)
    p.add_argument("--mirror-prob", type=float, default=0.0)
    p.add_argument("--rotation", choices=["none", "train-set", "rot-test-set"], default="none")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("canonicalize", help="rewrite annotation polygons in positional label form")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["positional", "clockwise-only"], default="positional")
    p.set_defaults(func=cmd_canonicalize)

    p = sub.add_parser("train", help="train a detector")
    _add_train_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory (default: regenerate a split from the run's seed)")
    p.add_argument("--split", choices=["normal", "rotated", "inverse", "train"], default="normal")
    p.add_argument("--label-mode", choices=["original", "positional"])
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--raster", type=int, default=512)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train a grid of configurations and compare them")
    _add_train_flags(p)
    p.add_argument("--grid", help="'default' or comma list of query_mode:efsa_mode:label_mode")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--cache", help="directory reused across invocations for finished runs")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ablate, seed=None)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and a tiny full model")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-seeds", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--model-tolerance", type=float, default=1e-3)
    p.add_argument("--ops", default="all", help="'all' or a comma-separated list")
    p.add_argument("--skip-model", action="store_true")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write to this directory instead of the recorded one")
    p.add_argument("--check", action="store_true", help="compare output hashes with the manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def _outputs_root(args) -> Path | None:
    if args.command == "canonicalize":
        return None
    out = getattr(args, "out", None)
    return Path(out) if out else None


def _manifest_config(args, argv: list[str]) -> dict:
    skip = {"func", "verbose"}
    cfg = {k: v for k, v in vars(args).items() if k not in skip}
    cfg["argv"] = argv
    return cfg


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        code = args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"dptext {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AnnotationFormatError, CheckpointError, FileNotFoundError, DegenerateGeometryError) as exc:
        print(f"dptext {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"dptext {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001 - scene generation and friends
        from .training.synth import SceneGenerationError

        if isinstance(exc, SceneGenerationError):
            print(f"dptext {args.command}: data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        raise
    if args.command == "replay":
        return code
    seed = getattr(args, "seed", None)
    manifest = RunManifest(args.command, _manifest_config(args, argv), resolve_seed(seed) if seed is not None
                           or args.command in ("gen-data", "train") else seed)
    root = _outputs_root(args)
    if args.command == "canonicalize":
        manifest.inputs = [args.inp]
        out_file = Path(args.out)
        manifest.outputs = {out_file.name: sha256_file(out_file)}
        mpath = out_file.with_name(out_file.name + ".manifest.json")
    elif root is not None:
        for key in ("inp", "checkpoint", "data", "config", "train_data", "eval_data"):
            if getattr(args, key, None):
                manifest.inputs.append(str(getattr(args, key)))
        manifest.outputs = hash_outputs(root)
        mpath = root / MANIFEST
    else:
        return code
    manifest.duration_seconds = round(time.perf_counter() - start, 3)
    write_manifest(mpath, manifest)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
