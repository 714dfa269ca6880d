"""Command-line front end: augment, train, eval, liftmap, trace.

Exit codes: 0 success, 2 usage or format problems, 3 numerical failure
(training divergence, aborted trace).  Every run writes one JSON manifest
next to its outputs.  ``--config FILE`` reads flat ``key = value`` lines
whose keys are flag names; explicit flags take precedence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import SplitSpec, augment, load_liftmaps, split, to_arrays, write_liftmaps
from .errors import ConfigError, DomainError, FormatError, TraceAbortedError, TrainingDivergedError
from .evalmetrics import evaluate_by_tag, write_percentile_csv
from .features import dim_lift, nondim_features
from .flowfield import DerivativeSet, circular_field, equilateral_triangle_field, load_gridded_field, rect_duct_field
from .neuralnet import TrainConfig, init_network, load_model, model_bytes, predict, save_model, train
from .tracer import (
    ModelLift,
    TraceConfig,
    load_field3d,
    load_particles,
    seed_particles,
    synthetic_lift,
    termination_summary,
    trace,
    trace_curved,
    write_trajectories,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _floats(text):
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_config(path):
    """Parse flat ``key = value`` text (``#`` comments) into a dict of strings."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, subcommand, args, inputs, outputs, started, **extra):
    config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items()
              if k not in ("func", "config_file")}
    manifest = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "config": config,
        "config_file": args.config_file,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): sha256_file(p) for p in inputs if p},
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": round(time.time() - started, 3),
        **extra,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _require_file(path, flag):
    if path is None:
        raise UsageError(f"{flag} is required")
    if not Path(path).is_file():
        raise UsageError(f"{flag}: no such file {path}")
    return path


# ---------------------------------------------------------------- augment


def cmd_augment(args):
    started = time.time()
    src = _require_file(args.input, "--in")
    try:
        delta = math.radians(args.delta_theta)
        samples = load_liftmaps(src, strict=not args.lenient, su_format=args.su_format)
        aug = augment(samples, delta_theta=delta, include_flip=args.flip)
    except ConfigError as exc:
        raise ConfigError(f"--delta-theta: {exc}") from exc
    try:
        spec = SplitSpec(tuple(args.split), args.seed)
    except ConfigError as exc:
        raise ConfigError(f"--split: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"augmented": out / "augmented.csv"}
    write_liftmaps(paths["augmented"], aug, include_provenance=True)
    sizes = {"augmented": len(aug)}
    if len(aug) >= 3:
        for name, part in zip(("train", "val", "test"), split(aug, spec, group=not args.paper_exact)):
            paths[name] = out / f"{name}.csv"
            write_liftmaps(paths[name], part, include_provenance=True)
            sizes[name] = len(part)
    write_manifest(out / "manifest.json", "augment", args, [src], paths.values(), started,
                   n_input=len(samples), sizes=sizes)
    print(json.dumps(sizes))


# ------------------------------------------------------------------ train


def cmd_train(args):
    started = time.time()
    tr_path = _require_file(args.train, "--train")
    va_path = _require_file(args.val, "--val")
    cfg = TrainConfig(max_epochs=args.epochs, patience=args.patience, batch_size=args.batch_size,
                      learning_rate=args.lr, momentum=args.momentum, seed=args.seed)
    Xtr, Ytr = to_arrays(load_liftmaps(tr_path, su_format=args.su_format))
    Xva, Yva = to_arrays(load_liftmaps(va_path, su_format=args.su_format))
    if len(Xtr) == 0 or len(Xva) == 0:
        raise DomainError("training and validation sets must be non-empty")
    net = init_network(args.layers, seed=args.seed)
    net, hist = train(net, (Xtr, Ytr), (Xva, Yva), cfg)
    model_out = Path(args.model_out)
    model_out.parent.mkdir(parents=True, exist_ok=True)
    save_model(net, model_out)
    hist_path = Path(args.history) if args.history else model_out.with_suffix(".history.csv")
    with open(hist_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, (a, b) in enumerate(zip(hist.train_loss, hist.val_loss), start=1):
            fh.write(f"{i},{a!r},{b!r}\n")
    write_manifest(model_out.with_suffix(".manifest.json"), "train", args, [tr_path, va_path],
                   [model_out, hist_path], started, best_epoch=hist.best_epoch, stop_epoch=hist.stop_epoch,
                   stop_reason=hist.stop_reason, best_val_loss=hist.best_val_loss,
                   model_sha256=sha256_file(model_out))
    print(json.dumps({"best_epoch": hist.best_epoch, "best_val_loss": hist.best_val_loss,
                      "stop_reason": hist.stop_reason}))


# ------------------------------------------------------------------- eval


def cmd_eval(args):
    started = time.time()
    model_path = _require_file(args.model, "--model")
    test_path = _require_file(args.test, "--test")
    net = load_model(model_path)
    samples = load_liftmaps(test_path, su_format=args.su_format)
    if not samples:
        raise DomainError("--test: test set is empty")
    reports = evaluate_by_tag(net, samples)
    out = Path(args.report_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {"all": reports["all"].to_dict(curves=False),
           "by_tag": {t: r.to_dict(curves=False) for t, r in reports.items() if t != "all"},
           "table": {t: dict(zip(("angular_deg", "magnitude_pct"), r.summary_cells())) for t, r in reports.items()}}
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    curves = Path(args.curves) if args.curves else out.with_suffix(".percentiles.csv")
    write_percentile_csv(curves, reports["all"])
    write_manifest(out.with_suffix(".manifest.json"), "eval", args, [model_path, test_path], [out, curves], started)
    print("tag   n       MSE        phi50 (phi90) deg   |C|50 (|C|90) %")
    for tag, r in reports.items():
        a, m = r.summary_cells()
        print(f"{tag:<5} {r.n_samples:<7d} {r.mse:<10.3g} {a:<19} {m}")


# ---------------------------------------------------------------- liftmap


def parse_geometry(spec, U_m):
    """``rect:W=..,H=..`` | ``circle:D=..`` | ``triangle:s=..`` | ``grid:path.csv``."""
    kind, _, rest = spec.partition(":")
    if kind == "grid":
        return load_gridded_field(rest)
    try:
        params = {k.strip(): float(v) for k, v in (kv.split("=") for kv in rest.split(",") if kv)}
    except ValueError:
        raise ConfigError(f"--geometry: cannot parse {spec!r}") from None
    if U_m is None:
        raise ConfigError("--U-m is required for analytic geometries")
    try:
        if kind == "rect":
            return rect_duct_field(params["W"], params["H"], U_m)
        if kind == "circle":
            return circular_field(params["D"], U_m)
        if kind == "triangle":
            return equilateral_triangle_field(params["s"], U_m)
    except KeyError as exc:
        raise ConfigError(f"--geometry: {kind} needs parameter {exc}") from None
    raise ConfigError(f"--geometry: unknown kind {kind!r}")


def liftmap(net, field, a, rho, mu, n_grid):
    """Evaluate the model on an n x n grid; returns (rows, n_interior, n_skipped)."""
    xmin, xmax, ymin, ymax = field.bounds
    X, Y = np.meshgrid(np.linspace(xmin, xmax, n_grid), np.linspace(ymin, ymax, n_grid), indexing="xy")
    x, y = X.ravel(), Y.ravel()
    inside = field.wall_distance(x, y) >= 0.5 * a
    x, y = x[inside], y[inside]
    if x.size == 0:
        return np.zeros((0, 4)), 0, 0
    d = field.derivatives(x, y)
    ok = np.asarray(d.w) > 1e-12 * field.U_m
    D = d.as_array()[ok]
    if D.shape[0] == 0:
        return np.zeros((0, 4)), int(x.size), int((~ok).sum())
    dd = DerivativeSet(*(D[:, i] for i in range(6)))
    feats = nondim_features(dd, rho, mu, a).as_array()
    C = np.atleast_2d(predict(net, feats))
    return np.column_stack([x[ok], y[ok], C]), int(x.size), int((~ok).sum())


def cmd_liftmap(args):
    started = time.time()
    net = _lift_network(args)
    field = parse_geometry(args.geometry, args.U_m)
    rows, n_int, n_skip = liftmap(net, field, args.a, args.rho, args.mu, args.grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("x,y,C_Lx,C_Ly\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r) + "\n")
    write_manifest(out.with_suffix(".manifest.json"), "liftmap", args, [args.model], [out], started,
                   field=field.describe(), n_interior=n_int, n_skipped=n_skip, n_rows=len(rows))
    print(json.dumps({"rows": len(rows), "interior": n_int, "skipped": n_skip}))


def _lift_network(args):
    if args.model:
        return load_model(_require_file(args.model, "--model"))
    if getattr(args, "zero_model", False):
        from .synthetic import zero_net

        return zero_net()
    raise UsageError("--model is required")


# ------------------------------------------------------------------ trace


def cmd_trace(args):
    started = time.time()
    if bool(args.model) == bool(args.synthetic_lift):
        raise UsageError("give exactly one of --model or --synthetic-lift")
    if bool(args.geometry) == bool(args.field3d):
        raise UsageError("give exactly one of --geometry or --field3d")
    if args.model:
        net = load_model(_require_file(args.model, "--model"))
        lift = ModelLift(net)
        lift_desc = {"name": "model", "sha256": sha256_file(args.model)}
    else:
        lift = synthetic_lift(args.synthetic_lift, k=args.lift_k, r_star=args.r_star)
        lift_desc = lift.describe()
    cfg = TraceConfig(dt=args.dt, t_max=args.t_max, length=args.length, rho=args.rho, mu=args.mu,
                      force_threshold=args.force_threshold, equilibrium_steps=args.equilibrium_steps,
                      record_every=args.record_every)
    if args.field3d:
        field3d = load_field3d(_require_file(args.field3d, "--field3d"))
        if not args.particles:
            raise UsageError("--particles is required with --field3d")
        particles = load_particles(_require_file(args.particles, "--particles"))
        trajs = trace_curved(particles, field3d, lift, cfg)
        field_desc = {"path": args.field3d, "sha256": sha256_file(args.field3d), **field3d.describe()}
    else:
        field = parse_geometry(args.geometry, args.U_m)
        if args.particles:
            particles = load_particles(_require_file(args.particles, "--particles"))
        else:
            if args.a is None:
                raise UsageError("--a is required when seeding particles")
            particles = seed_particles(field, args.n_particles, args.a, seed=args.seed)
        trajs = trace(particles, field, lift, cfg)
        field_desc = field.describe()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectories(out, trajs)
    summary = termination_summary(trajs)
    finals = {tr.particle_id: [float(v) for v in tr.final] for tr in trajs}
    write_manifest(out.with_suffix(".manifest.json"), "trace", args, [args.particles, args.model], [out], started,
                   lift=lift_desc, field=field_desc, termination=summary, final_positions=finals,
                   field_sha256=hashlib.sha256(json.dumps(field_desc, sort_keys=True).encode()).hexdigest())
    print(json.dumps(summary))


# ----------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="liftnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"liftnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", dest="config_file", default=None, help="flat key = value config file")
        sp.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("augment", help="rotate/flip a lift map and split it")
    common(a)
    a.add_argument("--in", dest="input", default=None, help="lift-map CSV")
    a.add_argument("--out", default="augmented", help="output directory")
    a.add_argument("--delta-theta", type=float, default=20.0, help="rotation increment in degrees")
    a.add_argument("--flip", type=_bool, nargs="?", const=True, default=True)
    a.add_argument("--paper-exact", type=_bool, nargs="?", const=True, default=False,
                   help="split augmented copies independently (no grouping by base sample)")
    a.add_argument("--split", type=_floats, default=(0.7, 0.15, 0.15))
    a.add_argument("--su-format", type=_bool, nargs="?", const=True, default=False)
    a.add_argument("--lenient", type=_bool, nargs="?", const=True, default=False, help="skip invalid rows")
    a.set_defaults(func=cmd_augment)

    t = sub.add_parser("train", help="train the lift network")
    common(t)
    t.add_argument("--train", default=None)
    t.add_argument("--val", default=None)
    t.add_argument("--model-out", default="model.liftnet")
    t.add_argument("--history", default=None)
    t.add_argument("--epochs", type=int, default=300)
    t.add_argument("--patience", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--layers", type=_ints, default=(6, 256, 128, 64, 2))
    t.add_argument("--su-format", type=_bool, nargs="?", const=True, default=False)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model on a test set")
    common(e)
    e.add_argument("--model", default=None)
    e.add_argument("--test", default=None)
    e.add_argument("--report-out", default="report.json")
    e.add_argument("--curves", default=None, help="percentile CSV (default: <report>.percentiles.csv)")
    e.add_argument("--su-format", type=_bool, nargs="?", const=True, default=False)
    e.set_defaults(func=cmd_eval)

    def physics(sp):
        sp.add_argument("--geometry", default=None, help="rect:W=..,H=.. | circle:D=.. | triangle:s=.. | grid:FILE")
        sp.add_argument("--U-m", dest="U_m", type=float, default=None, help="centreline velocity, m/s")
        sp.add_argument("--a", type=float, default=None, help="particle diameter, m")
        sp.add_argument("--rho", type=float, default=1000.0)
        sp.add_argument("--mu", type=float, default=1e-3)

    m = sub.add_parser("liftmap", help="tabulate predicted C_L over a cross-section")
    common(m)
    physics(m)
    m.add_argument("--model", default=None)
    m.add_argument("--grid", type=int, default=51)
    m.add_argument("--out", default="liftmap.csv")
    m.set_defaults(func=cmd_liftmap)

    r = sub.add_parser("trace", help="trace particles with model or synthetic lift")
    common(r)
    physics(r)
    r.add_argument("--model", default=None)
    r.add_argument("--synthetic-lift", default=None, help="zero | linear-restoring | radial-equilibrium")
    r.add_argument("--lift-k", type=float, default=None, help="stiffness of synthetic lifts, N/m")
    r.add_argument("--r-star", type=float, default=None, help="equilibrium radius of radial-equilibrium, m")
    r.add_argument("--field3d", default=None, help="x,y,z,u,v,w CSV (curved channels)")
    r.add_argument("--particles", default=None, help="particle_id,x,y,z,a CSV")
    r.add_argument("--n-particles", type=int, default=64)
    r.add_argument("--dt", type=float, default=1e-4)
    r.add_argument("--t-max", type=float, default=1.0)
    r.add_argument("--length", type=float, default=None, help="channel length (outlet), m")
    r.add_argument("--force-threshold", type=float, default=1e-12)
    r.add_argument("--equilibrium-steps", type=int, default=50)
    r.add_argument("--record-every", type=int, default=1)
    r.add_argument("--out", default="trajectories.csv")
    r.set_defaults(func=cmd_trace)
    return p, sub


def parse_args(argv):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.config_file:
        values = read_config(args.config_file)
        sp = sub.choices[args.command]
        known = {act.dest for act in sp._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"{args.config_file}: unknown key(s) {unknown}")
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        args.func(args)
    except SystemExit as exc:  # argparse usage errors exit 2 already
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (TrainingDivergedError, TraceAbortedError) as exc:
        print(f"liftnet: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, FormatError, DomainError, FileNotFoundError, OSError) as exc:
        print(f"liftnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
