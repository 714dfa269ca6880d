"""Error metrics for predicted lift-coefficient vectors.

Percentiles use linear interpolation between order statistics (numpy's
default "linear" method).  Samples whose true vector is exactly zero are
excluded from the angle and magnitude statistics but counted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, UndefinedMetricError
from .features import LiftCoefficient

PERCENTILE_GRID = np.linspace(0.0, 100.0, 101)


def _vec(c):
    return c.as_array() if isinstance(c, LiftCoefficient) else np.asarray(c, float)


def angular_error(c, c_hat):
    """Angle in degrees between the true and predicted lift vectors."""
    u, v = _vec(c), _vec(c_hat)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise UndefinedMetricError("angle undefined for a zero-magnitude vector")
    # atan2 of cross and dot stays accurate for nearly parallel vectors
    return float(np.degrees(np.arctan2(abs(u[0] * v[1] - u[1] * v[0]), np.dot(u, v))))


def magnitude_error(c, c_hat):
    """Relative magnitude error in percent."""
    nu, nv = np.linalg.norm(_vec(c)), np.linalg.norm(_vec(c_hat))
    if nu == 0:
        raise UndefinedMetricError("relative magnitude undefined for a zero true vector")
    return float(abs((nv - nu) / nu) * 100.0)


def angular_errors(C, C_hat):
    """Vectorised angular error; NaN where either vector is zero."""
    C, C_hat = np.atleast_2d(C), np.atleast_2d(C_hat)
    nu, nv = np.linalg.norm(C, axis=1), np.linalg.norm(C_hat, axis=1)
    ok = (nu > 0) & (nv > 0)
    out = np.full(len(C), np.nan)
    cross = np.abs(C[ok, 0] * C_hat[ok, 1] - C[ok, 1] * C_hat[ok, 0])
    out[ok] = np.degrees(np.arctan2(cross, np.einsum("ij,ij->i", C[ok], C_hat[ok])))
    return out


def magnitude_errors(C, C_hat):
    C, C_hat = np.atleast_2d(C), np.atleast_2d(C_hat)
    nu, nv = np.linalg.norm(C, axis=1), np.linalg.norm(C_hat, axis=1)
    out = np.full(len(C), np.nan)
    ok = nu > 0
    out[ok] = np.abs((nv[ok] - nu[ok]) / nu[ok]) * 100.0
    return out


def r2_score(y, y_hat):
    ss_res = float(np.sum((y - y_hat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else float("-inf")
    return 1.0 - ss_res / ss_tot


@dataclass
class EvalReport:
    n_samples: int
    mse: float
    r2_x: float
    r2_y: float
    angular_p50: float
    angular_p90: float
    magnitude_p50: float
    magnitude_p90: float
    n_angle_excluded: int = 0
    n_magnitude_excluded: int = 0
    percentiles: list = field(default_factory=lambda: PERCENTILE_GRID.tolist())
    angular_curve: list = field(default_factory=list)
    magnitude_curve: list = field(default_factory=list)

    def to_dict(self, curves=True):
        d = asdict(self)
        if not curves:
            for k in ("percentiles", "angular_curve", "magnitude_curve"):
                d.pop(k)
        return d

    def summary_cells(self):
        """Table-style cells "median (90th)" for angle and magnitude."""
        return (f"{self.angular_p50:.1f} ({self.angular_p90:.1f})", f"{self.magnitude_p50:.1f} ({self.magnitude_p90:.1f})")


def _curve(values):
    if values.size == 0:
        return [float("nan")] * PERCENTILE_GRID.size
    return np.percentile(values, PERCENTILE_GRID).tolist()


def evaluate_predictions(C, C_hat) -> EvalReport:
    C, C_hat = np.atleast_2d(np.asarray(C, float)), np.atleast_2d(np.asarray(C_hat, float))
    if C.size == 0:
        raise DomainError("cannot evaluate an empty test set")
    if C.shape != C_hat.shape:
        raise DomainError(f"shape mismatch {C.shape} vs {C_hat.shape}")
    ang = angular_errors(C, C_hat)
    mag = magnitude_errors(C, C_hat)
    ang_ok, mag_ok = ang[~np.isnan(ang)], mag[~np.isnan(mag)]
    ac, mc = _curve(ang_ok), _curve(mag_ok)
    return EvalReport(
        n_samples=len(C),
        mse=float(np.mean(np.sum((C - C_hat) ** 2, axis=1))),
        r2_x=r2_score(C[:, 0], C_hat[:, 0]),
        r2_y=r2_score(C[:, 1], C_hat[:, 1]),
        angular_p50=ac[50], angular_p90=ac[90],
        magnitude_p50=mc[50], magnitude_p90=mc[90],
        n_angle_excluded=int(np.isnan(ang).sum()),
        n_magnitude_excluded=int(np.isnan(mag).sum()),
        angular_curve=ac, magnitude_curve=mc,
    )


def evaluate(net, test_set) -> EvalReport:
    """Evaluate a network on LiftSamples or an (X, Y) array pair."""
    from .dataset import to_arrays
    from .neuralnet import predict

    if isinstance(test_set, tuple) and len(test_set) == 2:
        X, Y = (np.asarray(v, float) for v in test_set)
    else:
        X, Y = to_arrays(list(test_set))
    if len(X) == 0:
        raise DomainError("cannot evaluate an empty test set")
    return evaluate_predictions(Y, predict(net, X))


def evaluate_by_tag(net, samples):
    """Per-geometry-tag reports plus the pooled one under key "all"."""
    if not samples:
        raise DomainError("cannot evaluate an empty test set")
    tags = sorted({s.geometry_tag for s in samples})
    out = {t: evaluate(net, [s for s in samples if s.geometry_tag == t]) for t in tags}
    out["all"] = evaluate(net, samples)
    return out


def write_percentile_csv(path, report: EvalReport):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("percentile,angular_deg,magnitude_pct\n")
        for p, a, m in zip(report.percentiles, report.angular_curve, report.magnitude_curve):
            fh.write(f"{p!r},{a!r},{m!r}\n")
