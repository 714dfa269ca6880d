"""Tabulate how well the second-order Taylor expansion recovers the velocity on a particle rim.

Prints the maximum relative error over 36 rim points for particle centres
along the diagonal and the x axis of a square duct, for several sizes.

    python3 scripts/taylor_recovery.py --side 50e-6
"""

import argparse

import numpy as np

from liftnet.features import circumference_offsets, taylor_reconstruct
from liftnet.flowfield import rect_duct_field


def rim_error(field, x0, y0, a):
    dx, dy = circumference_offsets(a)
    approx = taylor_reconstruct(field.derivatives(x0, y0), dx, dy)
    exact = field.velocity(x0 + dx, y0 + dy)
    return float(np.max(np.abs(approx - exact) / exact))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--side", type=float, default=50e-6)
    p.add_argument("--sizes", default="5e-6,10e-6,15e-6")
    p.add_argument("--points", type=int, default=6)
    args = p.parse_args()
    field = rect_duct_field(args.side, args.side, 1.0)
    print("a_um,x_um,y_um,max_rel_error")
    for a in (float(v) for v in args.sizes.split(",")):
        lim = 0.5 * args.side - 0.5 * a
        for t in np.linspace(0.0, 0.9 * lim, args.points):
            for x0, y0 in ((t, 0.0), (t, t)):
                print(f"{a * 1e6:g},{x0 * 1e6:.2f},{y0 * 1e6:.2f},{rim_error(field, x0, y0, a):.3e}")
    print(f"# reference point (10, 5) um, a = 10 um: {rim_error(field, 10e-6, 5e-6, 10e-6):.3e}")


if __name__ == "__main__":
    main()
