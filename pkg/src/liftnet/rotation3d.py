"""Planar lift model applied to arbitrarily oriented 3D flow.

The rotation R maps the local flow direction onto +z (Rodrigues' formula
written with the cross-product matrix of n x z).  Gradients of the speed
|u| are rotated into that frame, the z-rows dropped, the planar network
evaluated, and the predicted coefficient rotated back with R^T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePointError
from .features import nondim_features
from .flowfield import DerivativeSet

_PI_ABOUT_X = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class RotationMap:
    R: np.ndarray
    u: np.ndarray

    @property
    def speed(self):
        return float(np.linalg.norm(self.u))


@dataclass(frozen=True)
class GradientSet3D:
    """Gradient G1 (3,) and Hessian G2 (3, 3) of the speed |u|."""

    G1: np.ndarray
    G2: np.ndarray


def rotation_matrix_to_z(n):
    """Rotation taking the unit vector ``n`` onto (0, 0, 1)."""
    nx, ny, nz = n
    S = np.array([[0.0, 0.0, -nx], [0.0, 0.0, -ny], [nx, ny, 0.0]])
    s2 = nx * nx + ny * ny
    if s2 == 0.0:
        # exactly (anti)parallel to z: the formula's denominator vanishes
        return np.eye(3) if nz > 0 else _PI_ABOUT_X.copy()
    if nz >= 0:
        # (1 - nz) / (nx^2 + ny^2) == 1 / (1 + nz), free of cancellation here
        return np.eye(3) + S + (S @ S) / (1.0 + nz)
    # near -z, s2 may be subnormal: divide through by the in-plane direction
    # instead of s2 so k * S @ S never forms inf * 0
    m = max(abs(nx), abs(ny))
    cx, cy = nx / m, ny / m
    c2 = cx * cx + cy * cy
    P = np.array([[cx * cx, cx * cy, 0.0], [cx * cy, cy * cy, 0.0], [0.0, 0.0, c2]]) / c2
    return np.eye(3) + S - (1.0 - nz) * P


def rotation_to_z(u) -> RotationMap:
    u = np.asarray(u, float)
    norm = np.linalg.norm(u)
    if not (norm > 0 and np.isfinite(norm)):
        raise DegeneratePointError("cannot align a zero or non-finite velocity with z")
    return RotationMap(rotation_matrix_to_z(u / norm), u.copy())


def map_gradients(g: GradientSet3D, rm: RotationMap):
    """Rotated planar gradient (2,) and Hessian (2, 2); z-terms dropped."""
    G2 = np.asarray(g.G2, float)
    G2 = 0.5 * (G2 + G2.T)
    R = rm.R
    g1 = R @ np.asarray(g.G1, float)
    g2 = R @ G2 @ R.T
    return g1[:2], g2[:2, :2]


def planar_derivatives(g: GradientSet3D, rm: RotationMap) -> DerivativeSet:
    g1, g2 = map_gradients(g, rm)
    return DerivativeSet(rm.speed, g1[0], g1[1], g2[0, 0], g2[1, 1], g2[0, 1])


def lift_3d(net, u, g: GradientSet3D, rho, mu, a):
    """3D lift force (N) on a particle in local flow ``u`` with speed gradients ``g``."""
    from .neuralnet import predict

    rm = rotation_to_z(u)
    d = planar_derivatives(g, rm)
    feats = nondim_features(d, rho, mu, a)
    c = predict(net, feats.as_array())
    c3 = rm.R.T @ np.array([c[0], c[1], 0.0])
    return rho * rm.speed**2 * a**2 * c3
