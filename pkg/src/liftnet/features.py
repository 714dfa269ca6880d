"""Geometry-free lift parametrisation.

The lift on a particle of diameter ``a`` is described by the local flow
state at its centre: the velocity w, its gradient and its Hessian.  These
are nondimensionalised with ``a`` and ``w`` into six features, and the lift
force with ``rho w^2 a^2`` into a lift coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePointError, DomainError
from .flowfield import DerivativeSet

FEATURE_NAMES = ("Re_p", "wbar_x", "wbar_y", "wbar_xx", "wbar_yy", "wbar_xy")


@dataclass(frozen=True)
class FeatureVector:
    """Dimensionless model inputs; fields are floats or equal-length arrays."""

    Re_p: float
    wbar_x: float
    wbar_y: float
    wbar_xx: float
    wbar_yy: float
    wbar_xy: float

    def as_array(self):
        return np.stack([np.asarray(getattr(self, f), float) for f in FEATURE_NAMES], axis=-1)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, float)
        cols = [arr[..., i] for i in range(6)]
        if arr.ndim == 1:
            cols = [float(c) for c in cols]
        return cls(*cols)


@dataclass(frozen=True)
class LiftCoefficient:
    C_Lx: float
    C_Ly: float

    def as_array(self):
        return np.stack([np.asarray(self.C_Lx, float), np.asarray(self.C_Ly, float)], axis=-1)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, float)
        if arr.ndim == 1:
            return cls(float(arr[0]), float(arr[1]))
        return cls(arr[..., 0], arr[..., 1])


def _require_positive(name, value):
    if np.any(~(np.asarray(value, float) > 0)):
        raise DomainError(f"{name} must be positive")


def _require_flow(w, w_min=0.0):
    w = np.asarray(w, float)
    if np.any(~(w > w_min)) or np.any(~np.isfinite(w)):
        raise DegeneratePointError(f"local velocity must exceed {w_min:g} m/s (stagnation point)")


def taylor_reconstruct(d: DerivativeSet, dx, dy):
    """Second-order Taylor estimate of w at an offset (dx, dy) from the centre."""
    return (
        d.w
        + d.w_x * dx
        + d.w_y * dy
        + 0.5 * d.w_xx * dx**2
        + 0.5 * d.w_yy * dy**2
        + d.w_xy * dx * dy
    )


def circumference_offsets(a, n=36):
    """Offsets of ``n`` equally spaced points on a particle's circumference."""
    theta = 2.0 * np.pi * np.arange(n) / n
    return 0.5 * a * np.cos(theta), 0.5 * a * np.sin(theta)


def nondim_features(d: DerivativeSet, rho, mu, a, w_min=0.0) -> FeatureVector:
    """Map a dimensional derivative set to the six dimensionless inputs.

    Raises DegeneratePointError when w <= w_min; callers that know the
    channel's U_m pass ``w_min = 1e-12 * U_m``.
    """
    for name, v in (("rho", rho), ("mu", mu), ("a", a)):
        _require_positive(name, v)
    _require_flow(d.w, w_min)
    w = d.w
    return FeatureVector(
        Re_p=rho * w * a / mu,
        wbar_x=d.w_x * a / w,
        wbar_y=d.w_y * a / w,
        wbar_xx=d.w_xx * a**2 / w,
        wbar_yy=d.w_yy * a**2 / w,
        wbar_xy=d.w_xy * a**2 / w,
    )


def nondim_target(F_L, rho, w, a) -> LiftCoefficient:
    """Lift coefficient C_L = F_L / (rho w^2 a^2) for a planar force."""
    _require_positive("rho", rho)
    _require_positive("a", a)
    _require_flow(w)
    F = np.asarray(F_L, float)
    scale = np.asarray(rho * w**2 * a**2, float)[..., None] if F.ndim > 1 else rho * w**2 * a**2
    return LiftCoefficient.from_array(F / scale)


def dim_lift(c: LiftCoefficient, rho, w, a):
    """Inverse of ``nondim_target``: planar lift force in newtons."""
    _require_positive("rho", rho)
    _require_positive("a", a)
    _require_flow(w)
    C = c.as_array() if isinstance(c, LiftCoefficient) else np.asarray(c, float)
    scale = np.asarray(rho * w**2 * a**2, float)
    return C * (scale[..., None] if C.ndim > 1 else scale)


def su_convert(c_su: LiftCoefficient, a, U_m, w, H) -> LiftCoefficient:
    """Convert a lift coefficient normalised by rho U_m^2 a^4 / H^2.

    Multiplies by a^2 U_m^2 / (w^2 H^2), where U_m is the centreline velocity
    and w the local velocity at the particle centre.
    """
    for name, v in (("w", w), ("H", H)):
        _require_positive(name, v)
    factor = np.asarray(a**2 * U_m**2 / (w**2 * H**2), float)
    C = c_su.as_array() if isinstance(c_su, LiftCoefficient) else np.asarray(c_su, float)
    return LiftCoefficient.from_array(C * (factor[..., None] if C.ndim > 1 else factor))
