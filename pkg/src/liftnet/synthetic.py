"""Closed-form stand-ins for DNS lift data, used by oracle tests and scripts.

``pseudo_lift`` is a smooth map from the six features to a lift
coefficient that is equivariant under rotations and mirrors of the
cross-section:

    C_L = A * ( g / (1 + Re_p / 20)  +  0.5 * Hbar @ g )

with g = (wbar_x, wbar_y), Hbar the nondimensional Hessian and amplitude
A (default 1).  Both terms transform as vectors, so rotating a sample's
primitives rotates C_L.  Real lift coefficients are O(1e-2); with raw
targets at that scale the default optimiser settings underfit, so the
oracle uses A = 1 (see scripts/synthetic_oracle.py --amplitude).
"""

from __future__ import annotations

import numpy as np

from .dataset import LiftSample
from .features import LiftCoefficient, nondim_features
from .flowfield import DerivativeSet, RectDuctField
from .neuralnet import NetworkParams

PAPER_PARTICLE_SIZES = (5.0e-6, 7.5e-6, 10.0e-6, 12.5e-6, 15.0e-6)
PAPER_MAX_VELOCITIES = (1.0, 2.0, 3.0, 4.0)


def pseudo_lift(X, amplitude=1.0):
    """Pseudo lift coefficient for an (n, 6) or (6,) feature array."""
    X = np.asarray(X, float)
    re, gx, gy, hxx, hyy, hxy = (X[..., i] for i in range(6))
    s = 1.0 / (1.0 + re / 20.0)
    cx = s * gx + 0.5 * (hxx * gx + hxy * gy)
    cy = s * gy + 0.5 * (hxy * gx + hyy * gy)
    return amplitude * np.stack([cx, cy], axis=-1)


def square_duct_liftmap(side=50e-6, sizes=PAPER_PARTICLE_SIZES, velocities=PAPER_MAX_VELOCITIES,
                        n_grid=8, rho=1000.0, mu=1e-3, lift=pseudo_lift):
    """Lift-map samples on a grid over one quadrant of a square duct.

    Positions cover [0, side/2 - a/2]^2 per particle size, mirroring the
    quadrant-limited DNS maps; targets come from ``lift``.
    """
    samples = []
    for U_m in velocities:
        field = RectDuctField(side, side, U_m)
        for a in sizes:
            lim = 0.5 * side - 0.5 * a
            g = np.linspace(0.0, lim, n_grid)
            X0, Y0 = np.meshgrid(g, g, indexing="ij")
            x0, y0 = X0.ravel(), Y0.ravel()
            d = field.derivatives(x0, y0)
            C = lift(nondim_features(d, rho, mu, a).as_array())
            D = d.as_array()
            for i in range(x0.size):
                samples.append(LiftSample(
                    float(x0[i]), float(y0[i]), a, rho, mu, U_m,
                    DerivativeSet.from_array(D[i]), LiftCoefficient(float(C[i, 0]), float(C[i, 1])),
                    "R", f"sq{side * 1e6:g}_U{U_m:g}_a{a * 1e6:g}_{i}",
                ))
    return samples


def equivariant_linear_net(c=0.01):
    """Single linear layer predicting C_L = c * (wbar_x, wbar_y).

    Its prediction rotates with the features, so it serves as a
    rotation-invariant-by-construction surrogate for scene-rotation tests.
    """
    W = np.zeros((2, 6))
    W[0, 1] = W[1, 2] = c
    return NetworkParams([6, 2], [W], [np.zeros(2)], ["linear"])


def zero_net(layer_sizes=(6, 256, 128, 64, 2)):
    sizes = list(layer_sizes)
    return NetworkParams(
        sizes,
        [np.zeros((o, i)) for i, o in zip(sizes, sizes[1:])],
        [np.zeros(o) for o in sizes[1:]],
        ["relu"] * (len(sizes) - 2) + ["linear"],
    )
