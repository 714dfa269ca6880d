"""Trace seeded particles through a square duct and summarise where they end up.

Uses a trained model when ``--model`` is given, otherwise the
equivariant linear surrogate (which focuses everything to the centre).

    python3 scripts/focusing_demo.py --model model.liftnet --out ends.csv
"""

import argparse

import numpy as np

from liftnet.flowfield import rect_duct_field
from liftnet.neuralnet import load_model
from liftnet.synthetic import equivariant_linear_net
from liftnet.tracer import ModelLift, TraceConfig, cluster_points, seed_particles, termination_summary, trace


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", default=None)
    p.add_argument("--side", type=float, default=50e-6)
    p.add_argument("--U-m", dest="U_m", type=float, default=1.0)
    p.add_argument("--a", type=float, default=10e-6)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--t-max", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV of final lateral positions")
    args = p.parse_args()

    net = load_model(args.model) if args.model else equivariant_linear_net(0.01)
    field = rect_duct_field(args.side, args.side, args.U_m)
    particles = seed_particles(field, args.n, args.a, seed=args.seed)
    trs = trace(particles, field, ModelLift(net), TraceConfig(dt=args.dt, t_max=args.t_max, record_every=1000))
    ends = np.array([tr.final[:2] for tr in trs])
    centres, labels = cluster_points(ends, 0.1 * args.side)
    print("termination:", termination_summary(trs))
    for k, c in enumerate(centres):
        print(f"cluster {k}: ({c[0] * 1e6:+.2f}, {c[1] * 1e6:+.2f}) um, {int(np.sum(labels == k))} particles")
    if args.out:
        np.savetxt(args.out, ends, delimiter=",", header="x,y", comments="")


if __name__ == "__main__":
    main()
