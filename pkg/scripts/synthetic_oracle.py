"""Train on the closed-form pseudo-lift over the square duct and report held-out metrics.

    python3 scripts/synthetic_oracle.py --amplitude 1 --lr 0.01

With ``--amplitude 0.01`` the targets have the magnitude of real lift
coefficients; raw-target training then underfits with these settings.
"""

import argparse
import json
import time

from liftnet.dataset import SplitSpec, augment, split, to_arrays
from liftnet.evalmetrics import evaluate
from liftnet.neuralnet import TrainConfig, init_network, save_model, train
from liftnet.synthetic import pseudo_lift, square_duct_liftmap


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--n-grid", type=int, default=8)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--patience", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=1)
    p.add_argument("--model-out", default=None)
    args = p.parse_args()

    base = square_duct_liftmap(n_grid=args.n_grid, lift=lambda X: pseudo_lift(X, args.amplitude))
    parts = split(augment(base), SplitSpec((0.7, 0.15, 0.15), seed=args.split_seed))
    (Xtr, Ytr), (Xva, Yva), (Xte, Yte) = (to_arrays(s) for s in parts)
    cfg = TrainConfig(max_epochs=args.epochs, patience=args.patience, batch_size=args.batch_size,
                      learning_rate=args.lr, momentum=args.momentum, seed=args.seed)
    t0 = time.perf_counter()
    net, hist = train(init_network(seed=args.seed), (Xtr, Ytr), (Xva, Yva), cfg)
    r = evaluate(net, (Xte, Yte))
    if args.model_out:
        save_model(net, args.model_out)
    print(json.dumps({
        "n_train": len(Xtr), "n_val": len(Xva), "n_test": len(Xte),
        "best_epoch": hist.best_epoch, "stop_reason": hist.stop_reason,
        "r2_x": r.r2_x, "r2_y": r.r2_y, "angular_p50_deg": r.angular_p50, "magnitude_p50_pct": r.magnitude_p50,
        "train_seconds": round(time.perf_counter() - t0, 1),
    }, indent=2))


if __name__ == "__main__":
    main()
