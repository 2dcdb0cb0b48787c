import csv
import json

import pytest

from dptext import cli
from dptext.autodiff import Tensor, ops
from dptext.autodiff.gradcheck import OP_REGISTRY

SMALL_CONFIG = {
    "train": {"iterations": 4, "batch_size": 2, "lr": 1e-3, "lr_decay_step": 3, "eval_every": 2,
              "train_scenes": 4, "eval_scenes": 2, "eval_raster": 128},
    "model": {"d_model": 16, "n_heads": 4, "n_deform_points": 2, "n_encoder_layers": 1, "n_decoder_layers": 2,
              "n_queries": 4, "n_points": 8, "d_ffn": 32, "stem_channels": [4, 8]},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return str(path)


def files(root):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())


def read_bytes(root):
    return {name: (root / name).read_bytes() for name in files(root) if name != "manifest.json"}


# -- gen-data ---------------------------------------------------------------

def test_gen_data_counts(tmp_path):
    assert cli.main(["gen-data", "--scenes", "10", "--out", str(tmp_path / "a")]) == 0
    names = files(tmp_path / "a")
    assert sum(n.endswith(".pgm") for n in names) == 10
    assert "annotations.json" in names and "manifest.json" in names
    assert cli.main(["gen-data", "--scenes", "10", "--rotation", "rot-test-set", "--out", str(tmp_path / "b")]) == 0
    assert sum(n.endswith(".pgm") for n in files(tmp_path / "b")) == 60


def test_gen_data_deterministic(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["gen-data", "--scenes", "5", "--seed", "3", "--inverse-prob", "0.4",
                         "--out", str(tmp_path / name)]) == 0
    assert read_bytes(tmp_path / "a") == read_bytes(tmp_path / "b")


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "5")
    assert cli.main(["gen-data", "--scenes", "2", "--out", str(tmp_path / "env")]) == 0
    assert cli.main(["gen-data", "--scenes", "2", "--seed", "5", "--out", str(tmp_path / "flag")]) == 0
    assert read_bytes(tmp_path / "env") == read_bytes(tmp_path / "flag")
    assert json.loads((tmp_path / "env" / "manifest.json").read_text())["seed"] == 5


def test_gen_data_refuses_non_empty_out(tmp_path):
    out = tmp_path / "a"
    assert cli.main(["gen-data", "--scenes", "1", "--out", str(out)]) == 0
    assert cli.main(["gen-data", "--scenes", "1", "--out", str(out)]) == 1
    assert cli.main(["gen-data", "--scenes", "1", "--out", str(out), "--force"]) == 0


def test_gen_data_bad_flags(tmp_path):
    assert cli.main(["gen-data", "--scenes", "1", "--inverse-prob", "1.5", "--out", str(tmp_path / "x")]) == 1
    assert cli.main(["gen-data", "--out", str(tmp_path / "x")]) == 1
    assert cli.main(["gen-data", "--scenes", "3", "--size", "12", "--out", str(tmp_path / "y")]) == 2


# -- canonicalize -----------------------------------------------------------

def _dataset(tmp_path, name, inverse_prob):
    out = tmp_path / name
    assert cli.main(["gen-data", "--scenes", "20", "--inverse-prob", str(inverse_prob), "--out", str(out)]) == 0
    return out / "annotations.json"


def test_canonicalize_idempotent(tmp_path, capsys):
    src = _dataset(tmp_path, "data", 0.0)
    once, twice = tmp_path / "once.json", tmp_path / "twice.json"
    assert cli.main(["canonicalize", "--in", str(src), "--out", str(once)]) == 0
    capsys.readouterr()
    assert cli.main(["canonicalize", "--in", str(once), "--out", str(twice)]) == 0
    assert " 0 start points moved" in capsys.readouterr().out
    assert once.read_bytes() == twice.read_bytes()
    assert (tmp_path / "once.json.manifest.json").exists()


def test_canonicalize_inverse_labels_all_move(tmp_path, capsys):
    src = _dataset(tmp_path, "inv", 1.0)
    assert cli.main(["canonicalize", "--in", str(src), "--out", str(tmp_path / "c.json")]) == 0
    assert "(100.0%)" in capsys.readouterr().out


def test_canonicalize_empty_list(tmp_path):
    src = tmp_path / "empty.json"
    src.write_text(json.dumps({"images": [], "annotations": []}))
    assert cli.main(["canonicalize", "--in", str(src), "--out", str(tmp_path / "o.json")]) == 0
    assert json.loads((tmp_path / "o.json").read_text()) == {"images": [], "annotations": []}


def test_canonicalize_malformed_json(tmp_path, capsys):
    src = tmp_path / "bad.json"
    src.write_text('{"images": [}')
    assert cli.main(["canonicalize", "--in", str(src), "--out", str(tmp_path / "o.json")]) == 2
    assert "bad.json:1:" in capsys.readouterr().err


def test_canonicalize_skips_degenerate(tmp_path, capsys):
    src = tmp_path / "deg.json"
    src.write_text(json.dumps({"images": [{"id": 0, "width": 8, "height": 8, "file": "x.pgm"}],
                               "annotations": [{"image_id": 0, "points": [[0, 0], [1, 0], [2, 0], [3, 0]]},
                                               {"image_id": 0, "points": [[0, 0], [4, 0], [4, 1], [0, 1]]}]}))
    assert cli.main(["canonicalize", "--in", str(src), "--out", str(tmp_path / "o.json")]) == 0
    assert "1 degenerate skipped" in capsys.readouterr().out
    assert len(json.loads((tmp_path / "o.json").read_text())["annotations"]) == 1


# -- train / eval / ablate --------------------------------------------------

def test_train_and_eval(tmp_path, config_file):
    run = tmp_path / "run"
    assert cli.main(["train", "--config", config_file, "--out", str(run)]) == 0
    for name in ("metrics.csv", "final.ckpt", "best.ckpt", "train_loss.csv", "convergence.png", "loss.png",
                 "config.json", "manifest.json"):
        assert (run / name).exists(), name
    with open(run / "metrics.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 3

    f = {}
    for thr in ("0.5", "0.99"):
        out = tmp_path / f"eval{thr}"
        assert cli.main(["eval", "--checkpoint", str(run / "final.ckpt"), "--iou-threshold", thr,
                         "--raster", "128", "--out", str(out)]) == 0
        with open(out / "eval.csv") as fh:
            f[thr] = float(next(csv.DictReader(fh))["f_measure"])
        assert (out / "sample.png").exists()
    assert f["0.99"] <= f["0.5"]


def test_train_config_conflict(tmp_path, config_file, capsys):
    args = ["train", "--config", config_file, "--iterations", "6", "--out", str(tmp_path / "r")]
    assert cli.main(args) == 1
    err = capsys.readouterr().err
    assert "iterations" in err and "small.json" in err and "--iterations" in err
    assert cli.main(args + ["--allow-override"]) == 0


def test_eval_missing_checkpoint(tmp_path):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"), "--out", str(tmp_path / "e")]) == 2


def test_ablate_default_grid(tmp_path, config_file):
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--config", config_file, "--eval-scenes", "1", "--allow-override",
                     "--cache", str(tmp_path / "cache"), "--out", str(out)]) == 0
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    assert all(r["rotation"] == "1" for r in rows)
    assert {(r["query_mode"], r["efsa_mode"], r["label_mode"]) for r in rows} == {
        (q, e, l) for q in ("box_baseline", "explicit_point") for e in ("fsa", "efsa")
        for l in ("original", "positional")}
    assert (out / "convergence.png").exists() and (out / "splits.png").exists()


def test_ablate_bad_grid(tmp_path, config_file):
    assert cli.main(["ablate", "--config", config_file, "--grid", "explicit_point:efsa",
                     "--out", str(tmp_path / "a")]) == 1
    assert cli.main(["ablate", "--config", config_file, "--grid", "explicit_point:efsa:reading",
                     "--out", str(tmp_path / "b")]) == 1


# -- gradcheck --------------------------------------------------------------

def test_gradcheck_passes(capsys):
    assert cli.main(["gradcheck", "--n-seeds", "2", "--skip-model"]) == 0
    out = capsys.readouterr().out
    for name in OP_REGISTRY:
        assert f"PASS  {name}" in out
    assert "max_rel_err=" in out


def test_gradcheck_catches_corrupted_backward(monkeypatch, capsys):
    def broken_sigmoid(a):
        out = ops.sigmoid(a)
        good = out._backward
        out._backward = lambda g: tuple(x * 1.5 for x in good(g))
        return out

    registry = dict(OP_REGISTRY)
    registry["sigmoid"] = lambda r: (broken_sigmoid, [Tensor(r.standard_normal((3, 4)))])
    monkeypatch.setattr(cli, "GRADCHECK_REGISTRY", registry)
    assert cli.main(["gradcheck", "--n-seeds", "2", "--skip-model", "--ops", "sigmoid,exp"]) == 3
    out = capsys.readouterr().out
    assert "FAIL  sigmoid" in out and "PASS  exp" in out


def test_gradcheck_unknown_op():
    assert cli.main(["gradcheck", "--ops", "not_an_op"]) == 1


# -- replay -----------------------------------------------------------------

def test_replay_reproduces_outputs(tmp_path, config_file):
    run = tmp_path / "run"
    assert cli.main(["train", "--config", config_file, "--out", str(run)]) == 0
    assert cli.main(["replay", str(run / "manifest.json"), "--out", str(tmp_path / "again"), "--check"]) == 0
    assert read_bytes(run) == read_bytes(tmp_path / "again")


def test_replay_detects_tampering(tmp_path):
    data = tmp_path / "data"
    assert cli.main(["gen-data", "--scenes", "2", "--out", str(data)]) == 0
    manifest = json.loads((data / "manifest.json").read_text())
    manifest["outputs"]["annotations.json"] = "0" * 64
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    assert cli.main(["replay", str(tmp_path / "m.json"), "--out", str(tmp_path / "again"), "--check"]) == 2


def test_version_and_usage(capsys):
    assert cli.main(["--version"]) == 0
    assert cli.main([]) == 1
    assert cli.main(["frobnicate"]) == 1
