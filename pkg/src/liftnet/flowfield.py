"""Undisturbed axial velocity fields w(x, y) for straight channels.

Cross-sections live in the xy-plane with the flow along +z.  Every field
exposes the velocity, its first and second cross-sectional derivatives and
a signed wall distance used for domain checks and particle wall clearance.
Analytic fields differentiate term-wise; gridded fields use tensor-product
splines.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely
from scipy.interpolate import RectBivariateSpline
from shapely.geometry import Polygon
from shapely.ops import nearest_points

from .errors import DomainError, FormatError, OutOfDomainError

RECT_SERIES_TERMS = 50


@dataclass(frozen=True)
class DerivativeSet:
    """Velocity and its cross-sectional derivatives at a point.

    Fields may be floats or equally-shaped arrays (one entry per point).
    Units: w in m/s, w_x/w_y in 1/s, second derivatives in 1/(m s).
    """

    w: float
    w_x: float
    w_y: float
    w_xx: float
    w_yy: float
    w_xy: float

    def gradient(self):
        return np.stack([np.asarray(self.w_x, float), np.asarray(self.w_y, float)], axis=-1)

    def hessian(self):
        xx, yy, xy = (np.asarray(v, float) for v in (self.w_xx, self.w_yy, self.w_xy))
        return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -2)

    def as_array(self):
        return np.stack([np.asarray(getattr(self, f), float) for f in _DERIV_FIELDS], axis=-1)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, float)
        if arr.shape[-1] != 6:
            raise ValueError("derivative array must have a trailing dimension of 6")
        cols = [arr[..., i] for i in range(6)]
        if arr.ndim == 1:
            cols = [float(c) for c in cols]
        return cls(*cols)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.as_array())))


_DERIV_FIELDS = ("w", "w_x", "w_y", "w_xx", "w_yy", "w_xy")


def _positive(**kwargs):
    for name, value in kwargs.items():
        if not (np.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be a positive finite number, got {value!r}")


class ChannelField:
    """Common interface of all cross-sectional velocity fields.

    Subclasses implement ``_velocity``, ``_derivatives`` and
    ``wall_distance`` (positive inside, zero on walls, negative outside).
    """

    kind = "abstract"
    U_m: float
    length_scale: float  # smallest characteristic dimension

    def velocity(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        self._check_inside(x, y, strict=False)
        w = self._velocity(x, y)
        return float(w) if w.ndim == 0 else w

    def derivatives(self, x, y) -> DerivativeSet:
        x, y = np.asarray(x, float), np.asarray(y, float)
        self._check_inside(x, y, strict=True)
        return self._derivatives(x, y)

    def contains(self, x, y, clearance=0.0):
        return self.wall_distance(x, y) >= clearance

    def _check_inside(self, x, y, strict):
        d = np.asarray(self.wall_distance(x, y))
        tol = 1e-12 * self.length_scale
        bad = d <= 0.0 if strict else d < -tol
        if np.any(bad):
            idx = np.flatnonzero(np.atleast_1d(bad))[0]
            px, py = np.broadcast_to(x, d.shape).ravel()[idx], np.broadcast_to(y, d.shape).ravel()[idx]
            where = "inside" if strict else "inside or on"
            raise OutOfDomainError(f"point ({px:.6g}, {py:.6g}) is not {where} the {self.kind} cross-section")

    def project_inside(self, x, y, clearance):
        """Return the nearest point whose wall distance is at least ``clearance``."""
        raise NotImplementedError

    @property
    def bounds(self):
        raise NotImplementedError


class RectDuctField(ChannelField):
    """Fully developed flow in a W x H rectangular duct centred at the origin.

    Two parabola-plus-correction Fourier expansions exist, one with the
    parabola across each side.  The correction of each decays exponentially
    away from one pair of walls and vanishes identically on the other, so
    every point is evaluated with the expansion that converges fastest there;
    both are exact on their own walls.
    """

    kind = "rect_duct"

    def __init__(self, W, H, U_m, terms=RECT_SERIES_TERMS):
        _positive(W=W, H=H, U_m=U_m)
        if terms < 1:
            raise DomainError("terms must be >= 1")
        self.W, self.H, self.U_m, self.terms = float(W), float(H), float(U_m), int(terms)
        self.length_scale = min(self.W, self.H)
        n = 2.0 * np.arange(self.terms) + 1.0
        sign = np.where(np.arange(self.terms) % 2 == 0, 1.0, -1.0)
        self._series = {}
        for axis, half in (("y", 0.5 * self.H), ("x", 0.5 * self.W)):
            self._series[axis] = (half, n * math.pi / (2.0 * half), 16.0 * half**2 / math.pi**3 * sign / n**3)
        self._scale = 1.0
        self._scale = self.U_m / self._expansion("y", np.zeros(1), np.zeros(1))[0][0]

    def _expansion(self, axis, p, q):
        """Unnormalised (w, w_p, w_q, w_pp, w_qq, w_pq) with the parabola across p."""
        b, a, k = self._series[axis]
        c = 0.5 * (self.W if axis == "y" else self.H)
        p = np.asarray(p, float)[..., None]
        q = np.asarray(q, float)[..., None]
        aq = np.abs(q)
        # cosh(a q)/cosh(a c) and sinh(a q)/cosh(a c) without overflow
        decay = np.exp(a * (aq - c)) / (1.0 + np.exp(-2.0 * a * c))
        ch = decay * (1.0 + np.exp(-2.0 * a * aq))
        sh = np.sign(q) * decay * (1.0 - np.exp(-2.0 * a * aq))
        cos, sin = np.cos(a * p), np.sin(a * p)
        p0 = p[..., 0]
        w = 0.5 * (b**2 - p0**2) - np.sum(k * ch * cos, -1)
        w_p = -p0 + np.sum(k * ch * a * sin, -1)
        w_q = -np.sum(k * sh * a * cos, -1)
        w_pp = -1.0 + np.sum(k * ch * a**2 * cos, -1)
        w_qq = -np.sum(k * ch * a**2 * cos, -1)
        w_pq = np.sum(k * sh * a**2 * sin, -1)
        s = self._scale
        return s * w, s * w_p, s * w_q, s * w_pp, s * w_qq, s * w_pq

    def _all(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        hx, hy = 0.5 * self.W, 0.5 * self.H
        # y-expansion converges like exp(-pi (hx - |x|) / H), x-expansion like exp(-pi (hy - |y|) / W)
        use_y = (hx - np.abs(x)) / hy >= (hy - np.abs(y)) / hx
        w, w_y, w_x, w_yy, w_xx, w_xy = self._expansion("y", y, x)
        if not np.all(use_y):
            alt = self._expansion("x", x, y)
            w, w_x, w_y, w_xx, w_yy, w_xy = (
                np.where(use_y, v, u) for v, u in zip((w, w_x, w_y, w_xx, w_yy, w_xy), alt)
            )
        return w, w_x, w_y, w_xx, w_yy, w_xy

    def _velocity(self, x, y):
        return self._all(x, y)[0]

    def _derivatives(self, x, y):
        return _derivative_set(*self._all(x, y))

    def wall_distance(self, x, y):
        return np.minimum(0.5 * self.W - np.abs(x), 0.5 * self.H - np.abs(y))

    def project_inside(self, x, y, clearance):
        hx, hy = 0.5 * self.W - clearance, 0.5 * self.H - clearance
        if hx < 0 or hy < 0:
            raise DomainError("clearance exceeds the duct half-width")
        return float(np.clip(x, -hx, hx)), float(np.clip(y, -hy, hy))

    @property
    def bounds(self):
        return (-0.5 * self.W, 0.5 * self.W, -0.5 * self.H, 0.5 * self.H)

    def describe(self):
        return {"kind": self.kind, "W": self.W, "H": self.H, "U_m": self.U_m, "terms": self.terms}


class CircularField(ChannelField):
    """Hagen-Poiseuille flow w = U_m (1 - (2r/D)^2)."""

    kind = "circular"

    def __init__(self, D, U_m):
        _positive(D=D, U_m=U_m)
        self.D, self.U_m = float(D), float(U_m)
        self.length_scale = self.D

    def _velocity(self, x, y):
        return self.U_m * (1.0 - 4.0 * (x**2 + y**2) / self.D**2)

    def _derivatives(self, x, y):
        k = -8.0 * self.U_m / self.D**2
        curv = np.full(np.broadcast(x, y).shape, k)
        return _derivative_set(self._velocity(x, y), k * x, k * y, curv, curv, 0.0 * curv)

    def wall_distance(self, x, y):
        return 0.5 * self.D - np.hypot(x, y)

    def project_inside(self, x, y, clearance):
        rmax = 0.5 * self.D - clearance
        if rmax < 0:
            raise DomainError("clearance exceeds the pipe radius")
        r = math.hypot(x, y)
        if r <= rmax:
            return float(x), float(y)
        return x * rmax / r, y * rmax / r

    @property
    def bounds(self):
        r = 0.5 * self.D
        return (-r, r, -r, r)

    def describe(self):
        return {"kind": self.kind, "D": self.D, "U_m": self.U_m}


class TriangleField(ChannelField):
    """Equilateral triangle of side s, centroid at the origin, base at y = -h/3.

    The Poiseuille solution is proportional to the product of the three
    wall distances and peaks at the centroid.
    """

    kind = "equilateral_triangle"

    def __init__(self, s, U_m):
        _positive(s=s, U_m=U_m)
        self.s, self.U_m = float(s), float(U_m)
        self.h = self.s * math.sqrt(3.0) / 2.0
        self.length_scale = self.h
        r3 = math.sqrt(3.0) / 2.0
        # inward unit normals of base, right and left walls
        self._normals = np.array([[0.0, 1.0], [-r3, -0.5], [r3, -0.5]])
        self._offsets = np.full(3, self.h / 3.0)
        self._k = 27.0 * self.U_m / self.h**3
        self._poly = Polygon(self.vertices)

    @property
    def vertices(self):
        h, s = self.h, self.s
        return [(-s / 2, -h / 3), (s / 2, -h / 3), (0.0, 2 * h / 3)]

    def _distances(self, x, y):
        n = self._normals
        return [n[i, 0] * x + n[i, 1] * y + self._offsets[i] for i in range(3)]

    def _velocity(self, x, y):
        d1, d2, d3 = self._distances(x, y)
        return self._k * d1 * d2 * d3

    def _derivatives(self, x, y):
        d = self._distances(x, y)
        n = self._normals
        k = self._k
        w = k * d[0] * d[1] * d[2]
        g = [0.0, 0.0]
        hxx = hyy = hxy = 0.0
        for i in range(3):
            j, m = (i + 1) % 3, (i + 2) % 3
            for comp in range(2):
                g[comp] = g[comp] + k * n[i, comp] * d[j] * d[m]
            # pair (j, m) weighted by the remaining distance d[i]
            hxx = hxx + k * 2.0 * n[j, 0] * n[m, 0] * d[i]
            hyy = hyy + k * 2.0 * n[j, 1] * n[m, 1] * d[i]
            hxy = hxy + k * (n[j, 0] * n[m, 1] + n[j, 1] * n[m, 0]) * d[i]
        return _derivative_set(w, g[0], g[1], hxx, hyy, hxy)

    def wall_distance(self, x, y):
        return np.minimum.reduce(self._distances(np.asarray(x, float), np.asarray(y, float)))

    def project_inside(self, x, y, clearance):
        return _project_polygon(self._poly, x, y, clearance, self.wall_distance)

    @property
    def bounds(self):
        return (-self.s / 2, self.s / 2, -self.h / 3, 2 * self.h / 3)

    def describe(self):
        return {"kind": self.kind, "s": self.s, "U_m": self.U_m}


class GriddedField(ChannelField):
    """Spline interpolant of velocities sampled on a structured grid.

    Nodes outside the optional wetted-domain polygon are clamped to zero
    velocity before fitting; evaluation outside the polygon is an error.
    """

    kind = "gridded"

    def __init__(self, xs, ys, w_grid, order=3, mask=None, U_m=None):
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        w_grid = np.array(w_grid, float)
        if order not in (2, 3):
            raise FormatError(f"interpolation order must be 2 or 3, got {order}")
        if w_grid.shape != (xs.size, ys.size):
            raise FormatError(f"velocity grid shape {w_grid.shape} does not match ({xs.size}, {ys.size})")
        if xs.size <= order or ys.size <= order:
            raise FormatError(f"need more than {order} nodes per axis for order-{order} splines")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise FormatError("grid coordinates must be strictly increasing")
        if not np.all(np.isfinite(w_grid)):
            raise FormatError("gridded velocities contain NaN or inf")
        self.xs, self.ys, self.order = xs, ys, order
        if mask is None:
            mask = [(xs[0], ys[0]), (xs[-1], ys[0]), (xs[-1], ys[-1]), (xs[0], ys[-1])]
        self.mask = [tuple(map(float, p)) for p in mask]
        self._poly = Polygon(self.mask)
        if not self._poly.is_valid or self._poly.area <= 0:
            raise FormatError("domain mask polygon is invalid")
        self._boundary = self._poly.boundary
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        outside = ~shapely.intersects_xy(self._poly, gx, gy)
        w_grid[outside] = 0.0
        self.w_grid = w_grid
        self.U_m = float(U_m) if U_m is not None else float(w_grid.max())
        _positive(U_m=self.U_m)
        self.length_scale = min(xs[-1] - xs[0], ys[-1] - ys[0])
        # fit about the mean so a constant field yields identically zero derivatives
        self._offset = float(np.mean(w_grid))
        self._spline = RectBivariateSpline(xs, ys, w_grid - self._offset, kx=order, ky=order, s=0)

    def _velocity(self, x, y):
        return self._offset + self._spline(x, y, grid=False)

    def _derivatives(self, x, y):
        sp = self._spline
        return _derivative_set(
            self._offset + sp(x, y, grid=False),
            sp(x, y, dx=1, grid=False),
            sp(x, y, dy=1, grid=False),
            sp(x, y, dx=2, grid=False),
            sp(x, y, dy=2, grid=False),
            sp(x, y, dx=1, dy=1, grid=False),
        )

    def wall_distance(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        dist = shapely.distance(self._boundary, shapely.points(x, y))
        inside = shapely.contains_xy(self._poly, x, y)
        return np.where(inside, dist, -dist)

    def project_inside(self, x, y, clearance):
        return _project_polygon(self._poly, x, y, clearance, self.wall_distance)

    @property
    def bounds(self):
        minx, miny, maxx, maxy = self._poly.bounds
        return (minx, maxx, miny, maxy)

    def describe(self):
        return {"kind": self.kind, "nx": self.xs.size, "ny": self.ys.size, "order": self.order, "U_m": self.U_m}


def _project_polygon(poly, x, y, clearance, wall_distance):
    if wall_distance(x, y) >= clearance:
        return float(x), float(y)
    shrunk = poly.buffer(-clearance)
    if shrunk.is_empty:
        raise DomainError("clearance leaves no admissible region in the cross-section")
    target = nearest_points(shrunk, shapely.Point(x, y))[0]
    px, py = target.x, target.y
    # nudge onto the admissible side of the buffered boundary
    cx, cy = shrunk.centroid.x, shrunk.centroid.y
    for _ in range(60):
        if wall_distance(px, py) >= clearance * (1 - 1e-9):
            break
        px, py = px + 1e-9 * (cx - px), py + 1e-9 * (cy - py)
    return float(px), float(py)


def _derivative_set(w, w_x, w_y, w_xx, w_yy, w_xy):
    vals = [np.asarray(v, float) for v in (w, w_x, w_y, w_xx, w_yy, w_xy)]
    shape = np.broadcast_shapes(*(v.shape for v in vals))
    vals = [np.broadcast_to(v, shape).copy() for v in vals]
    if shape == ():
        vals = [float(v) for v in vals]
    return DerivativeSet(*vals)


def rect_duct_field(W, H, U_m, terms=RECT_SERIES_TERMS):
    return RectDuctField(W, H, U_m, terms=terms)


def circular_field(D, U_m):
    return CircularField(D, U_m)


def equilateral_triangle_field(s, U_m):
    return TriangleField(s, U_m)


def gridded_field_from_table(nodes, velocities, order=3, mask=None, U_m=None):
    """Build a gridded field from scattered-order node rows.

    ``nodes`` is an (n, 2) array of grid coordinates forming a complete
    structured grid in any row order; ``velocities`` the matching values.
    """
    nodes = np.asarray(nodes, float)
    velocities = np.asarray(velocities, float)
    if nodes.ndim != 2 or nodes.shape[1] != 2 or velocities.shape != (nodes.shape[0],):
        raise FormatError("nodes must be (n, 2) with one velocity per node")
    if not np.all(np.isfinite(nodes)):
        raise FormatError("node coordinates contain NaN or inf")
    if not np.all(np.isfinite(velocities)):
        bad = int(np.flatnonzero(~np.isfinite(velocities))[0])
        raise FormatError(f"velocity at node row {bad} is not finite")
    xs, ix = np.unique(nodes[:, 0], return_inverse=True)
    ys, iy = np.unique(nodes[:, 1], return_inverse=True)
    if xs.size * ys.size != nodes.shape[0]:
        raise FormatError(f"ragged grid: {nodes.shape[0]} nodes for {xs.size} x {ys.size} axes")
    grid = np.full((xs.size, ys.size), np.nan)
    hits = np.zeros((xs.size, ys.size), int)
    np.add.at(hits, (ix, iy), 1)
    if np.any(hits != 1):
        raise FormatError("ragged grid: duplicate or missing nodes")
    grid[ix, iy] = velocities
    return GriddedField(xs, ys, grid, order=order, mask=mask, U_m=U_m)


def load_gridded_field(csv_path, meta_path=None, order=3):
    """Read a gridded cross-section from ``x,y,w`` CSV plus JSON sidecar.

    The sidecar (default: ``<csv>.json``) may hold ``U_m``, ``mask`` (list of
    [x, y] vertices) and ``units`` (must be SI when given).
    """
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(csv_path.suffix + ".json")
    meta = {}
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
    units = meta.get("units", {})
    for col, expected in (("x", "m"), ("y", "m"), ("w", "m/s")):
        if col in units and units[col] != expected:
            raise FormatError(f"column {col!r} declared in {units[col]!r}, expected {expected!r}")
    rows = _read_numeric_csv(csv_path, ["x", "y", "w"])
    return gridded_field_from_table(
        rows[:, :2], rows[:, 2], order=meta.get("order", order), mask=meta.get("mask"), U_m=meta.get("U_m")
    )


def _read_numeric_csv(path, columns):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise FormatError(f"{path}: missing column(s) {missing}")
        idx = [header.index(c) for c in columns]
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append([float(row[i]) for i in idx])
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: non-numeric or missing cell") from None
    return np.array(out, float).reshape(-1, len(columns))


def eval_velocity(field: ChannelField, x, y):
    return field.velocity(x, y)


def eval_derivatives(field: ChannelField, x, y) -> DerivativeSet:
    return field.derivatives(x, y)
