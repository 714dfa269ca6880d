import csv
import hashlib
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from liftnet.cli import main
from liftnet.dataset import load_liftmaps, write_liftmaps
from liftnet.neuralnet import load_model, save_model
from liftnet.synthetic import equivariant_linear_net, square_duct_liftmap, zero_net


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def linear_maps(tmp_path):
    """Lift maps whose target is exactly 0.01 * (wbar_x, wbar_y), split into three files."""
    ds = square_duct_liftmap(n_grid=6, sizes=(6e-6, 10e-6), velocities=(0.5, 1.0),
                             lift=lambda X: 0.01 * X[:, 1:3])
    rng = np.random.default_rng(0)
    idx = rng.permutation(len(ds))
    paths = {}
    for name, part in zip(("train", "val", "test"), np.array_split(idx, [len(ds) * 7 // 10, len(ds) * 85 // 100])):
        paths[name] = tmp_path / f"{name}.csv"
        write_liftmaps(paths[name], [ds[i] for i in part])
    return paths


@pytest.fixture
def small_map(tmp_path):
    p = tmp_path / "raw.csv"
    ds = square_duct_liftmap(n_grid=4, sizes=(10e-6,), velocities=(1.0,))[:10]
    write_liftmaps(p, ds)
    return p


# ---------------------------------------------------------------- augment


def test_augment_defaults_36x(tmp_path, small_map, capsys):
    out = tmp_path / "aug"
    assert main(["augment", "--in", str(small_map), "--out", str(out)]) == 0
    assert len(load_liftmaps(out / "augmented.csv")) == 360
    sizes = json.loads(capsys.readouterr().out)
    assert sizes["train"] + sizes["val"] + sizes["test"] == 360
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "augment" and manifest["inputs"][str(small_map)] == sha(small_map)


def test_augment_no_flip_quarter_turns(tmp_path, small_map):
    out = tmp_path / "aug"
    assert main(["augment", "--in", str(small_map), "--out", str(out), "--flip=false", "--delta-theta=90"]) == 0
    assert len(load_liftmaps(out / "augmented.csv")) == 40


def test_augment_bad_delta_theta(tmp_path, small_map, capsys):
    assert main(["augment", "--in", str(small_map), "--out", str(tmp_path / "a"), "--delta-theta", "70"]) == 2
    assert "--delta-theta" in capsys.readouterr().err


def test_augment_missing_input(tmp_path, capsys):
    assert main(["augment", "--in", str(tmp_path / "none.csv")]) == 2
    assert "--in" in capsys.readouterr().err


def test_augment_output_feeds_train(tmp_path, small_map):
    out = tmp_path / "aug"
    assert main(["augment", "--in", str(small_map), "--out", str(out)]) == 0
    args = ["train", "--train", str(out / "train.csv"), "--val", str(out / "val.csv"),
            "--model-out", str(tmp_path / "m.liftnet"), "--epochs", "2", "--layers", "6,8,2"]
    assert main(args) == 0


# ------------------------------------------------------------------ train


def train_args(paths, model, *extra):
    return ["train", "--train", str(paths["train"]), "--val", str(paths["val"]), "--model-out", str(model),
            "--layers", "6,2", "--lr", "0.05", "--momentum", "0.9", "--batch-size", "16",
            "--epochs", "300", "--patience", "20", *extra]


def test_train_linear_task(tmp_path, linear_maps):
    model = tmp_path / "m.liftnet"
    assert main(train_args(linear_maps, model)) == 0
    hist = rows(model.with_suffix(".history.csv"))
    assert min(float(r["val_loss"]) for r in hist) < 1e-6
    manifest = json.loads(model.with_suffix(".manifest.json").read_text())
    assert manifest["model_sha256"] == sha(model)


def test_train_deterministic(tmp_path, linear_maps):
    a, b = tmp_path / "a.liftnet", tmp_path / "b.liftnet"
    for m in (a, b):
        assert main(train_args(linear_maps, m, "--seed", "7", "--epochs", "5", "--layers", "6,4,2")) == 0
    assert sha(a) == sha(b)


def test_train_missing_val(tmp_path, linear_maps):
    args = ["train", "--train", str(linear_maps["train"]), "--val", str(tmp_path / "none.csv")]
    assert main(args) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_3(tmp_path, linear_maps, capsys):
    assert main(train_args(linear_maps, tmp_path / "m.liftnet", "--lr", "1e4", "--layers", "6,16,2",
                           "--epochs", "50", "--patience", "50")) == 3
    assert "epoch" in capsys.readouterr().err


def test_config_file_and_precedence(tmp_path, linear_maps):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# trainer settings\nepochs = 3\nlayers = 6,4,2\nlr = 0.01\n")
    model = tmp_path / "m.liftnet"
    base = ["train", "--config", str(cfg), "--train", str(linear_maps["train"]), "--val", str(linear_maps["val"]),
            "--model-out", str(model)]
    assert main(base) == 0
    manifest = json.loads(model.with_suffix(".manifest.json").read_text())
    assert manifest["config"]["epochs"] == 3 and manifest["config"]["layers"] == [6, 4, 2]
    assert len(rows(model.with_suffix(".history.csv"))) == 3
    assert main(base + ["--epochs", "2"]) == 0
    assert len(rows(model.with_suffix(".history.csv"))) == 2
    cfg.write_text("bogus = 1\n")
    assert main(base) == 2


# ------------------------------------------------------------------- eval


def test_eval_perfect_predictor(tmp_path, linear_maps, capsys):
    model = tmp_path / "perfect.liftnet"
    save_model(equivariant_linear_net(0.01), model)
    report = tmp_path / "r.json"
    assert main(["eval", "--model", str(model), "--test", str(linear_maps["test"]), "--report-out", str(report)]) == 0
    doc = json.loads(report.read_text())
    a = doc["all"]
    assert a["mse"] < 1e-30
    for key in ("angular_p50", "angular_p90", "magnitude_p50", "magnitude_p90"):
        assert a[key] == pytest.approx(0.0, abs=1e-6)
    assert sum(r["n_samples"] for r in doc["by_tag"].values()) == a["n_samples"]
    assert len(rows(report.with_suffix(".percentiles.csv"))) == 101
    assert "phi50" in capsys.readouterr().out


def test_eval_by_tag_counts(tmp_path, linear_maps):
    ds = load_liftmaps(linear_maps["test"])
    mixed = [s.__class__(**{**s.__dict__, "geometry_tag": "T" if i % 3 == 0 else "R"}) for i, s in enumerate(ds)]
    test = tmp_path / "mixed.csv"
    write_liftmaps(test, mixed)
    model = tmp_path / "z.liftnet"
    save_model(zero_net(), model)
    report = tmp_path / "r.json"
    assert main(["eval", "--model", str(model), "--test", str(test), "--report-out", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert set(doc["by_tag"]) == {"R", "T"}
    assert sum(r["n_samples"] for r in doc["by_tag"].values()) == doc["all"]["n_samples"] == len(ds)
    assert set(doc["table"]) == {"R", "T", "all"}


def test_eval_empty_test_set(tmp_path, linear_maps):
    empty = tmp_path / "empty.csv"
    write_liftmaps(empty, [])
    model = tmp_path / "z.liftnet"
    save_model(zero_net(), model)
    assert main(["eval", "--model", str(model), "--test", str(empty), "--report-out", str(tmp_path / "r.json")]) == 2


# ---------------------------------------------------------------- liftmap


def test_liftmap_zero_net(tmp_path, capsys):
    model = tmp_path / "z.liftnet"
    save_model(zero_net(), model)
    out = tmp_path / "map.csv"
    assert main(["liftmap", "--model", str(model), "--geometry", "rect:W=50e-6,H=50e-6", "--U-m", "1",
                 "--a", "10e-6", "--grid", "21", "--out", str(out)]) == 0
    counts = json.loads(capsys.readouterr().out)
    data = rows(out)
    assert len(data) == counts["interior"] - counts["skipped"] > 0
    assert all(float(r["C_Lx"]) == 0.0 and float(r["C_Ly"]) == 0.0 for r in data)
    manifest = json.loads(out.with_suffix(".manifest.json").read_text())
    assert manifest["n_rows"] == len(data)


def test_liftmap_square_symmetry(tmp_path, capsys):
    # the feature grid of the square duct is exactly 4-fold symmetric; the map
    # of the equivariant surrogate is checked for the same sign pattern
    model = tmp_path / "e.liftnet"
    save_model(equivariant_linear_net(0.01), model)
    out = tmp_path / "map.csv"
    assert main(["liftmap", "--model", str(model), "--geometry", "rect:W=50e-6,H=50e-6", "--U-m", "1",
                 "--a", "10e-6", "--grid", "21", "--out", str(out)]) == 0
    M = np.array([[float(r[k]) for k in ("x", "y", "C_Lx", "C_Ly")] for r in rows(out)])
    lookup = {(round(x * 1e9), round(y * 1e9)): (cx, cy) for x, y, cx, cy in M}
    worst = 0.0
    for x, y, cx, cy in M:
        rx, ry = lookup[(round(-y * 1e9), round(x * 1e9))]  # 90 degree rotation of the point
        worst = max(worst, abs(rx + cy), abs(ry - cx))
    print(f"max 4-fold asymmetry of C_L: {worst:.3g}")
    assert np.all(np.sign(M[:, 2]) == -np.sign(M[:, 0]) * (np.abs(M[:, 2]) > 1e-12))


def test_liftmap_unknown_geometry(tmp_path):
    model = tmp_path / "z.liftnet"
    save_model(zero_net(), model)
    assert main(["liftmap", "--model", str(model), "--geometry", "hexagon:s=1", "--U-m", "1", "--a", "1e-5"]) == 2


# ------------------------------------------------------------------ trace


def test_trace_planted_equilibrium(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["trace", "--synthetic-lift", "radial-equilibrium", "--r-star", "30e-6", "--lift-k", "1e-5",
                 "--geometry", "circle:D=100e-6", "--U-m", "1", "--a", "5e-6", "--n-particles", "16",
                 "--dt", "2e-4", "--t-max", "0.5", "--record-every", "100", "--out", str(out)]) == 0
    assert json.loads(capsys.readouterr().out) == {"equilibrium": 16}
    manifest = json.loads(out.with_suffix(".manifest.json").read_text())
    for x, y, _ in manifest["final_positions"].values():
        assert math.hypot(x, y) == pytest.approx(30e-6, rel=0.01)


def test_trace_zero_lift_preserves_lateral(tmp_path):
    parts = tmp_path / "p.csv"
    parts.write_text("particle_id,x,y,z,a\nq0,1e-5,-5e-6,0,1e-5\nq1,-2e-5,1.5e-5,0,1e-5\n")
    out = tmp_path / "t.csv"
    assert main(["trace", "--synthetic-lift", "zero", "--geometry", "rect:W=60e-6,H=50e-6", "--U-m", "0.5",
                 "--particles", str(parts), "--length", "5e-4", "--equilibrium-steps", "1000000",
                 "--out", str(out)]) == 0
    data = rows(out)
    for pid, x0, y0 in (("q0", 1e-5, -5e-6), ("q1", -2e-5, 1.5e-5)):
        mine = [r for r in data if r["particle_id"] == pid]
        assert all(float(r["x"]) == x0 and float(r["y"]) == y0 for r in mine)
        assert float(mine[-1]["z"]) >= 5e-4


def test_trace_needs_one_lift_source(tmp_path):
    assert main(["trace", "--geometry", "circle:D=1e-4", "--U-m", "1", "--a", "1e-5"]) == 2


def test_trace_deterministic_outputs(tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        assert main(["trace", "--synthetic-lift", "linear-restoring", "--geometry", "circle:D=100e-6",
                     "--U-m", "1", "--a", "8e-6", "--n-particles", "4", "--seed", "3", "--t-max", "5e-3",
                     "--out", str(out)]) == 0
        outs.append(out)
    assert sha(outs[0]) == sha(outs[1])
    ma, mb = (json.loads(o.with_suffix(".manifest.json").read_text()) for o in outs)
    assert ma["final_positions"] == mb["final_positions"]


def test_entry_point_version():
    res = subprocess.run([sys.executable, "-m", "liftnet.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "liftnet" in res.stdout


def test_zero_net_file_roundtrip(tmp_path):
    p = tmp_path / "z.liftnet"
    save_model(zero_net(), p)
    assert load_model(p).layer_sizes == [6, 256, 128, 64, 2]
