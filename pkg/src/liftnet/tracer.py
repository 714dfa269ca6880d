"""Quasi-steady Lagrangian particle tracing.

Particles are advected axially by the undisturbed flow and migrate
laterally at the Stokes-drag terminal velocity F_L / (3 pi mu a).  The
position ODE is integrated with classical RK4; steps whose lift cannot be
evaluated (outside the domain, stagnant flow) are retried with half the
step.  Centres closer than a/2 to a wall are projected back onto the
clearance boundary.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigError, DegeneratePointError, DomainError, FormatError, OutOfDomainError, TraceAbortedError
from .features import dim_lift, nondim_features
from .flowfield import ChannelField
from .rotation3d import GradientSet3D, lift_3d

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParticleState:
    x: float
    y: float
    z: float
    a: float
    id: str = "0"
    neutrally_buoyant: bool = True

    @property
    def position(self):
        return np.array([self.x, self.y, self.z])

    def moved(self, p):
        return ParticleState(float(p[0]), float(p[1]), float(p[2]), self.a, self.id, self.neutrally_buoyant)


@dataclass(frozen=True)
class TraceConfig:
    dt: float = 1e-4
    t_max: float = 1.0
    length: float | None = None  # outlet at z = length for straight channels
    rho: float = 1000.0
    mu: float = 1e-3
    force_threshold: float = 1e-12
    equilibrium_steps: int = 50
    dt_min: float | None = None
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0 or not self.t_max > 0:
            raise ConfigError("dt and t_max must be positive")
        if not self.force_threshold > 0:
            raise ConfigError("force_threshold must be positive")
        if self.equilibrium_steps < 1 or self.record_every < 1:
            raise ConfigError("equilibrium_steps and record_every must be >= 1")
        if not self.rho > 0 or not self.mu > 0:
            raise ConfigError("rho and mu must be positive")
        if self.length is not None and not self.length > 0:
            raise ConfigError("length must be positive")

    @property
    def min_step(self):
        return self.dt_min if self.dt_min is not None else self.dt * 2.0**-30


@dataclass
class Trajectory:
    particle_id: str
    a: float
    t: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    reason: str = ""
    wall_clamps: int = 0

    @property
    def final(self):
        return np.asarray(self.positions[-1])

    def as_array(self):
        return np.column_stack([np.asarray(self.t), np.asarray(self.positions)])


def migration_velocity(F_L, mu, a):
    """Lateral velocity of a force-free sphere under lift F_L (Stokes drag)."""
    if not (mu > 0 and a > 0):
        raise DomainError("mu and a must be positive")
    return np.asarray(F_L, float) / (3.0 * math.pi * mu * a)


# -------------------------------------------------------------- lift sources


class LiftSource:
    """Lateral force on a particle; planar for 2D fields, spatial for 3D."""

    name = "abstract"

    def planar(self, field: ChannelField, x, y, a, rho, mu):
        raise NotImplementedError

    def spatial(self, field3d, p, a, rho, mu):
        raise ConfigError(f"lift source {self.name!r} has no 3D form")

    def describe(self):
        return {"name": self.name}


class ModelLift(LiftSource):
    name = "model"

    def __init__(self, net):
        self.net = net

    def planar(self, field, x, y, a, rho, mu):
        from .neuralnet import predict

        d = field.derivatives(x, y)
        feats = nondim_features(d, rho, mu, a, w_min=1e-12 * field.U_m)
        return dim_lift(predict(self.net, feats.as_array()), rho, d.w, a)

    def spatial(self, field3d, p, a, rho, mu):
        u, g = field3d.flow(p)
        return lift_3d(self.net, u, g, rho, mu, a)


class ZeroLift(LiftSource):
    name = "zero"

    def planar(self, field, x, y, a, rho, mu):
        return np.zeros(2)

    def spatial(self, field3d, p, a, rho, mu):
        return np.zeros(3)


class LinearRestoringLift(LiftSource):
    """F = -k (x, y): exponential relaxation towards the channel axis."""

    name = "linear-restoring"

    def __init__(self, k=1e-5):
        self.k = float(k)

    def planar(self, field, x, y, a, rho, mu):
        return -self.k * np.array([x, y], float)

    def describe(self):
        return {"name": self.name, "k": self.k}


class RadialEquilibriumLift(LiftSource):
    """F = k (r* - r) e_r: a stable equilibrium ring at radius r*."""

    name = "radial-equilibrium"

    def __init__(self, r_star, k=1e-5):
        self.r_star, self.k = float(r_star), float(k)

    def planar(self, field, x, y, a, rho, mu):
        r = math.hypot(x, y)
        if r == 0.0:
            return np.zeros(2)
        return self.k * (self.r_star - r) / r * np.array([x, y], float)

    def describe(self):
        return {"name": self.name, "k": self.k, "r_star": self.r_star}


SYNTHETIC_LIFTS = {
    "zero": lambda k=None, r_star=None: ZeroLift(),
    "linear-restoring": lambda k=1e-5, r_star=None: LinearRestoringLift(k),
    "radial-equilibrium": lambda k=1e-5, r_star=None: RadialEquilibriumLift(r_star, k),
}


def synthetic_lift(name, **params):
    try:
        factory = SYNTHETIC_LIFTS[name]
    except KeyError:
        raise ConfigError(f"unknown synthetic lift {name!r}; choose from {sorted(SYNTHETIC_LIFTS)}") from None
    params = {k: v for k, v in params.items() if v is not None}
    if name == "radial-equilibrium" and "r_star" not in params:
        raise ConfigError("radial-equilibrium lift needs r_star")
    return factory(**params)


# ---------------------------------------------------------------- 3D fields


class StraightChannel3D:
    """A 2D cross-section field extruded along the local z axis and placed rigidly.

    Global position p maps to local coordinates Q^T (p - origin); the flow
    runs along Q e_z.  ``length`` places the outlet at local z = length.
    """

    def __init__(self, field: ChannelField, rotation=None, origin=None, length=None):
        self.field = field
        self.Q = np.eye(3) if rotation is None else np.asarray(rotation, float)
        self.origin = np.zeros(3) if origin is None else np.asarray(origin, float)
        self.length = length
        if not np.allclose(self.Q.T @ self.Q, np.eye(3), atol=1e-12):
            raise ConfigError("rotation must be orthonormal")

    def to_local(self, p):
        return self.Q.T @ (np.asarray(p, float) - self.origin)

    def to_global(self, q):
        return self.Q @ np.asarray(q, float) + self.origin

    def velocity(self, p):
        q = self.to_local(p)
        return self.Q @ np.array([0.0, 0.0, self.field.velocity(q[0], q[1])])

    def flow(self, p):
        q = self.to_local(p)
        d = self.field.derivatives(q[0], q[1])
        Q = self.Q
        u = Q @ np.array([0.0, 0.0, d.w])
        G1 = Q @ np.array([d.w_x, d.w_y, 0.0])
        H = np.array([[d.w_xx, d.w_xy, 0.0], [d.w_xy, d.w_yy, 0.0], [0.0, 0.0, 0.0]])
        return u, GradientSet3D(G1, Q @ H @ Q.T)

    def wall_distance(self, p):
        q = self.to_local(p)
        return float(self.field.wall_distance(q[0], q[1]))

    def project_inside(self, p, clearance):
        q = self.to_local(p)
        if self.field.wall_distance(q[0], q[1]) >= clearance:
            return np.asarray(p, float), False
        x, y = self.field.project_inside(q[0], q[1], clearance)
        return self.to_global([x, y, q[2]]), True

    def reached_outlet(self, p):
        return self.length is not None and self.to_local(p)[2] >= self.length

    def describe(self):
        return {"kind": "straight3d", "section": self.field.describe(), "rotation": self.Q.tolist(),
                "origin": self.origin.tolist(), "length": self.length}


class GriddedField3D:
    """Velocity vectors on a structured xyz grid (e.g. a curved channel).

    Speed gradients and Hessians are computed on the grid with second-order
    finite differences and interpolated trilinearly with the velocity.
    Walls are the box faces other than the outlet axis; nodes with
    vanishing speed are treated as solid.
    """

    def __init__(self, xs, ys, zs, U, outlet=None):
        self.axes = [np.asarray(v, float) for v in (xs, ys, zs)]
        U = np.asarray(U, float)
        shape = tuple(a.size for a in self.axes)
        if U.shape != shape + (3,):
            raise FormatError(f"velocity grid has shape {U.shape}, expected {shape + (3,)}")
        if any(a.size < 3 for a in self.axes):
            raise FormatError("need at least 3 nodes per axis")
        if not np.all(np.isfinite(U)):
            raise FormatError("3D velocities contain NaN or inf")
        S = np.linalg.norm(U, axis=-1)
        self.max_speed = float(S.max())
        if not self.max_speed > 0:
            raise FormatError("3D field has zero velocity everywhere")
        G1 = np.stack(np.gradient(S, *self.axes, edge_order=2), axis=-1)
        rows = [np.stack(np.gradient(G1[..., i], *self.axes, edge_order=2), axis=-1) for i in range(3)]
        G2 = np.stack(rows, axis=-2)
        packed = np.concatenate([U, G1, G2.reshape(shape + (9,))], axis=-1)
        self._interp = RegularGridInterpolator(self.axes, packed, method="linear", bounds_error=False, fill_value=None)
        outlet = outlet or {"axis": "z", "position": float(self.axes[2][-1]), "direction": 1}
        self.outlet_axis = "xyz".index(outlet["axis"])
        self.outlet_position = float(outlet["position"])
        self.outlet_direction = 1 if outlet.get("direction", 1) >= 0 else -1
        self.lo = np.array([a[0] for a in self.axes])
        self.hi = np.array([a[-1] for a in self.axes])

    def _eval(self, p):
        p = np.asarray(p, float).copy()
        lateral = [i for i in range(3) if i != self.outlet_axis]
        if np.any(p[lateral] < self.lo[lateral]) or np.any(p[lateral] > self.hi[lateral]):
            raise OutOfDomainError(f"point {p} lies outside the 3D field box")
        k = self.outlet_axis
        p[k] = min(max(p[k], self.lo[k]), self.hi[k])
        return self._interp(p[None, :])[0]

    def velocity(self, p):
        return self._eval(p)[:3]

    def flow(self, p):
        v = self._eval(p)
        u = v[:3]
        if np.linalg.norm(u) <= 1e-12 * self.max_speed:
            raise DegeneratePointError(f"zero-velocity cell at {np.asarray(p)}")
        return u, GradientSet3D(v[3:6], v[6:].reshape(3, 3))

    def wall_distance(self, p):
        p = np.asarray(p, float)
        lateral = [i for i in range(3) if i != self.outlet_axis]
        return float(min(min(p[i] - self.lo[i], self.hi[i] - p[i]) for i in lateral))

    def project_inside(self, p, clearance):
        p = np.asarray(p, float).copy()
        clamped = False
        for i in range(3):
            if i == self.outlet_axis:
                continue
            lo, hi = self.lo[i] + clearance, self.hi[i] - clearance
            if p[i] < lo or p[i] > hi:
                p[i] = min(max(p[i], lo), hi)
                clamped = True
        return p, clamped

    def reached_outlet(self, p):
        return self.outlet_direction * (p[self.outlet_axis] - self.outlet_position) >= 0

    def describe(self):
        return {"kind": "gridded3d", "shape": [a.size for a in self.axes],
                "outlet": {"axis": "xyz"[self.outlet_axis], "position": self.outlet_position,
                           "direction": self.outlet_direction}}


def load_field3d(csv_path, meta_path=None):
    """Read an ``x,y,z,u,v,w`` structured-grid CSV with optional JSON sidecar."""
    from .flowfield import _read_numeric_csv

    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(csv_path.suffix + ".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    rows = _read_numeric_csv(csv_path, ["x", "y", "z", "u", "v", "w"])
    axes, inv = [], []
    for j in range(3):
        vals, idx = np.unique(rows[:, j], return_inverse=True)
        axes.append(vals)
        inv.append(idx)
    shape = tuple(a.size for a in axes)
    if int(np.prod(shape)) != len(rows):
        raise FormatError(f"ragged 3D grid: {len(rows)} rows for axes {shape}")
    U = np.full(shape + (3,), np.nan)
    U[inv[0], inv[1], inv[2]] = rows[:, 3:]
    if np.isnan(U).any():
        raise FormatError("ragged 3D grid: duplicate or missing nodes")
    return GriddedField3D(*axes, U, outlet=meta.get("outlet"))


# ----------------------------------------------------------------- stepping


@dataclass
class StepResult:
    state: ParticleState
    dt: float
    force: np.ndarray  # lift at the start of the step
    clamped: bool


def _planar_rhs(field, lift, cfg, a):
    drag = 3.0 * math.pi * cfg.mu * a

    def rhs(p):
        F = np.asarray(lift.planar(field, p[0], p[1], a, cfg.rho, cfg.mu), float)
        w = field.velocity(p[0], p[1])
        return np.array([F[0] / drag, F[1] / drag, w]), F

    return rhs


def _spatial_rhs(field3d, lift, cfg, a):
    drag = 3.0 * math.pi * cfg.mu * a

    def rhs(p):
        F = np.asarray(lift.spatial(field3d, p, a, cfg.rho, cfg.mu), float)
        return field3d.velocity(p) + F / drag, F

    return rhs


def _rk4(rhs, p, dt):
    k1, F = rhs(p)
    k2, _ = rhs(p + 0.5 * dt * k1)
    k3, _ = rhs(p + 0.5 * dt * k2)
    k4, _ = rhs(p + dt * k3)
    return p + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), F


def _advance(state, rhs, project, cfg, dt):
    p = state.position
    while True:
        try:
            p_new, F = _rk4(rhs, p, dt)
            break
        except (OutOfDomainError, DegeneratePointError) as exc:
            dt *= 0.5
            if dt < cfg.min_step:
                raise TraceAbortedError(
                    f"particle {state.id}: step fell below dt_min={cfg.min_step:g} s at {p.tolist()} ({exc})"
                ) from exc
    p_new, clamped = project(p_new, 0.5 * state.a)
    return StepResult(state.moved(p_new), dt, F, clamped)


def _planar_project(field):
    def project(p, clearance):
        if field.wall_distance(p[0], p[1]) >= clearance:
            return p, False
        x, y = field.project_inside(p[0], p[1], clearance)
        return np.array([x, y, p[2]]), True

    return project


def step(state, field, lift_source, cfg: TraceConfig, dt=None) -> StepResult:
    """One RK4 step of a particle in a straight channel cross-section."""
    return _advance(state, _planar_rhs(field, lift_source, cfg, state.a), _planar_project(field), cfg,
                    cfg.dt if dt is None else dt)


def _run(state, rhs, project, outlet, clearance_ok, cfg):
    if not clearance_ok(state):
        raise DomainError(f"particle {state.id} starts closer than a/2 to a wall")
    traj = Trajectory(state.id, state.a, [0.0], [state.position])
    t, dt, n_steps = 0.0, cfg.dt, 0
    calm = pinned = 0
    while True:
        remaining = cfg.t_max - t
        # absorb round-off so t_max is hit with a full final step, not a sliver
        h = remaining if remaining <= dt * (1 + 1e-9) else dt
        res = _advance(state, rhs, project, cfg, h)
        state = res.state
        t = cfg.t_max if res.dt == remaining else t + res.dt
        dt = min(cfg.dt, 2.0 * res.dt) if res.dt < h else dt
        n_steps += 1
        calm = calm + 1 if np.linalg.norm(res.force) < cfg.force_threshold else 0
        pinned = pinned + 1 if res.clamped else 0
        traj.wall_clamps += int(res.clamped)
        reason = ""
        if outlet(state):
            reason = "outlet"
        elif calm >= cfg.equilibrium_steps:
            reason = "equilibrium"
        elif pinned >= cfg.equilibrium_steps:
            reason = "wall_clamp"
        elif t >= cfg.t_max:
            reason = "max_time"
        if reason or n_steps % cfg.record_every == 0:
            traj.t.append(t)
            traj.positions.append(state.position)
        if reason:
            traj.reason = reason
            return traj


def trace(particles, field, lift_source, cfg: TraceConfig):
    """Trace particles through a straight channel; one Trajectory each."""
    out = []
    for s in particles:
        rhs = _planar_rhs(field, lift_source, cfg, s.a)
        out.append(_run(
            s, rhs, _planar_project(field),
            lambda st: cfg.length is not None and st.z >= cfg.length,
            lambda st: field.wall_distance(st.x, st.y) >= 0.5 * st.a * (1 - 1e-12),
            cfg,
        ))
    return out


def trace_curved(particles, field3d, lift_source, cfg: TraceConfig):
    """Trace particles through a 3D field using the rotational lift mapping."""
    out = []
    for s in particles:
        rhs = _spatial_rhs(field3d, lift_source, cfg, s.a)
        out.append(_run(
            s, rhs, field3d.project_inside,
            lambda st: field3d.reached_outlet(st.position),
            lambda st: field3d.wall_distance(st.position) >= 0.5 * st.a * (1 - 1e-12),
            cfg,
        ))
    return out


# ---------------------------------------------------------------- utilities


def seed_particles(field: ChannelField, n, a, seed=0, z=0.0, prefix="p"):
    """Uniformly distributed particle centres respecting the a/2 wall clearance."""
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = field.bounds
    out = []
    while len(out) < n:
        x, y = rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)
        if field.wall_distance(x, y) > 0.5 * a:
            out.append(ParticleState(float(x), float(y), float(z), float(a), f"{prefix}{len(out)}"))
    return out


def load_particles(path):
    """Read particles from a ``particle_id,x,y,z,a`` CSV."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"particle_id", "x", "y", "z", "a"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise FormatError(f"{path}: particle file needs columns {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(ParticleState(float(row["x"]), float(row["y"]), float(row["z"]), float(row["a"]),
                                         row["particle_id"]))
            except (TypeError, ValueError):
                raise FormatError(f"{path}:{lineno}: non-numeric particle value") from None
    return out


def write_trajectories(path, trajectories):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("particle_id,t,x,y,z\n")
        for tr in trajectories:
            for t, p in zip(tr.t, tr.positions):
                fh.write(f"{tr.particle_id},{t!r},{float(p[0])!r},{float(p[1])!r},{float(p[2])!r}\n")


def termination_summary(trajectories):
    summary = {}
    for tr in trajectories:
        summary[tr.reason] = summary.get(tr.reason, 0) + 1
    return summary


def cluster_points(points, radius):
    """Greedy single-link clustering of 2D end points; returns cluster centres and labels."""
    pts = np.asarray(points, float)
    labels = -np.ones(len(pts), int)
    n = 0
    for i in range(len(pts)):
        if labels[i] >= 0:
            continue
        labels[i] = n
        frontier = [i]
        while frontier:
            j = frontier.pop()
            near = np.flatnonzero((labels < 0) & (np.linalg.norm(pts - pts[j], axis=1) <= radius))
            labels[near] = n
            frontier.extend(near.tolist())
        n += 1
    centres = np.array([pts[labels == k].mean(axis=0) for k in range(n)]).reshape(n, -1)
    return centres, labels
