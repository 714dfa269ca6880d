"""Lift-map datasets: CSV ingestion, symmetry augmentation and splitting.

Rotations act on the dimensional primitives (position, velocity gradient,
Hessian, lift coefficient); features are always recomputed afterwards.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FormatError
from .features import LiftCoefficient, nondim_features, su_convert
from .flowfield import DerivativeSet

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "x0", "y0", "a", "rho", "mu", "U_m",
    "w", "w_x", "w_y", "w_xx", "w_yy", "w_xy",
    "C_Lx", "C_Ly", "geometry_tag",
)
GEOMETRY_TAGS = ("R", "T", "S", "P", "other")

_UNITS = {
    "x0": "m", "y0": "m", "a": "m", "H": "m",
    "rho": "kg/m^3", "mu": "Pa*s", "U_m": "m/s", "w": "m/s",
    "w_x": "1/s", "w_y": "1/s",
    "w_xx": "1/(m*s)", "w_yy": "1/(m*s)", "w_xy": "1/(m*s)",
    "C_Lx": "1", "C_Ly": "1",
}
_UNIT_ALIASES = {"kg/m3": "kg/m^3", "pas": "Pa*s", "pa*s": "Pa*s", "pa.s": "Pa*s", "-": "1", "": "1",
                 "1/(s*m)": "1/(m*s)", "1/ms": "1/(m*s)", "m^-1s^-1": "1/(m*s)"}
_HEADER_RE = re.compile(r"^\s*([^\[\]\s]+)\s*(?:\[([^\]]*)\])?\s*$")


@dataclass(frozen=True)
class LiftSample:
    x0: float
    y0: float
    a: float
    rho: float
    mu: float
    U_m: float
    d: DerivativeSet
    target: LiftCoefficient
    geometry_tag: str = "other"
    provenance_id: str = ""

    def validate(self):
        nums = [self.x0, self.y0, self.a, self.rho, self.mu, self.U_m, self.target.C_Lx, self.target.C_Ly]
        if not (all(math.isfinite(v) for v in nums) and self.d.is_finite()):
            raise DomainError("sample contains non-finite values")
        if self.a <= 0 or self.rho <= 0 or self.mu <= 0 or self.U_m <= 0:
            raise DomainError("a, rho, mu and U_m must be positive")
        if not self.d.w > 1e-12 * self.U_m:
            raise DomainError(f"w={self.d.w!r} is a stagnation point (w <= 1e-12 U_m)")
        if self.geometry_tag not in GEOMETRY_TAGS:
            raise DomainError(f"unknown geometry tag {self.geometry_tag!r}")
        f = nondim_features(self.d, self.rho, self.mu, self.a).as_array()
        if not np.all(np.isfinite(f)):
            raise DomainError("features are not finite")
        return self

    @property
    def base_id(self):
        return self.provenance_id.split("#", 1)[0]


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(not (0.0 < f < 1.0) for f in fr):
            raise ConfigError(f"split fractions must be three values in (0, 1), got {self.fractions!r}")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fr)!r}")
        object.__setattr__(self, "fractions", fr)


# --------------------------------------------------------------------- CSV I/O


def _norm_unit(u):
    key = u.replace(" ", "").replace("·", "*")
    return _UNIT_ALIASES.get(key.lower(), _UNIT_ALIASES.get(key, key))


def _parse_header(header, column_map, path):
    names = []
    for j, cell in enumerate(header):
        m = _HEADER_RE.match(cell)
        if not m:
            raise FormatError(f"{path}:1: malformed header cell {cell!r} (column {j + 1})")
        name, unit = m.group(1), m.group(2)
        name = column_map.get(name, name)
        if unit is not None and name in _UNITS and _norm_unit(unit) != _UNITS[name]:
            raise FormatError(
                f"{path}:1: column {name!r} declared in [{unit}], expected [{_UNITS[name]}]"
            )
        names.append(name)
    return names


def load_liftmaps(path, strict=True, su_format=False, column_map=None):
    """Read a lift-map CSV into LiftSample records.

    With ``strict`` the first invalid row raises FormatError naming its line;
    otherwise invalid rows are logged and skipped.  ``su_format`` expects
    Su-convention targets plus an ``H`` column and converts them on load.
    """
    path = Path(path)
    column_map = dict(column_map or {})
    required = list(CSV_COLUMNS) + (["H"] if su_format else [])
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, header expected") from None
        names = _parse_header(header, column_map, path)
        missing = [c for c in required if c not in names]
        if missing:
            raise FormatError(f"{path}:1: missing column(s) {', '.join(missing)}")
        col = {n: names.index(n) for n in required}
        prov_col = names.index("provenance_id") if "provenance_id" in names else None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                samples.append(_row_to_sample(row, col, prov_col, su_format, path, lineno))
            except (FormatError, DomainError) as exc:
                if strict:
                    if isinstance(exc, FormatError):
                        raise
                    raise FormatError(f"{path}:{lineno}: {exc}") from exc
                log.warning("skipping %s:%d: %s", path, lineno, exc)
    return samples


def _row_to_sample(row, col, prov_col, su_format, path, lineno):
    vals = {}
    for name, j in col.items():
        if name == "geometry_tag":
            continue
        try:
            vals[name] = float(row[j])
        except IndexError:
            raise FormatError(f"{path}:{lineno}: missing cell for column {name!r}") from None
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric value {row[j]!r} in column {name!r}") from None
    try:
        tag = row[col["geometry_tag"]].strip()
    except IndexError:
        raise FormatError(f"{path}:{lineno}: missing cell for column 'geometry_tag'") from None
    d = DerivativeSet(vals["w"], vals["w_x"], vals["w_y"], vals["w_xx"], vals["w_yy"], vals["w_xy"])
    target = LiftCoefficient(vals["C_Lx"], vals["C_Ly"])
    if su_format:
        target = su_convert(target, vals["a"], vals["U_m"], vals["w"], vals["H"])
    pid = row[prov_col] if prov_col is not None and prov_col < len(row) else f"{path.stem}:{lineno}"
    s = LiftSample(vals["x0"], vals["y0"], vals["a"], vals["rho"], vals["mu"], vals["U_m"], d, target, tag, pid)
    return s.validate()


def write_liftmaps(path, samples, include_provenance=False):
    """Write samples in the canonical lift-map schema (shortest round-trip floats)."""
    cols = list(CSV_COLUMNS) + (["provenance_id"] if include_provenance else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in samples:
            d = s.d
            nums = (s.x0, s.y0, s.a, s.rho, s.mu, s.U_m, d.w, d.w_x, d.w_y, d.w_xx, d.w_yy, d.w_xy,
                    s.target.C_Lx, s.target.C_Ly)
            row = [repr(float(v)) for v in nums] + [s.geometry_tag]
            if include_provenance:
                row.append(s.provenance_id)
            w.writerow(row)


# ---------------------------------------------------------------- symmetries


def rotate_sample(s: LiftSample, theta) -> LiftSample:
    """Rotate a sample by ``theta`` radians about the channel axis."""
    c, sn = math.cos(theta), math.sin(theta)
    d = s.d
    xx, yy, xy = d.w_xx, d.w_yy, d.w_xy
    nd = DerivativeSet(
        w=d.w,
        w_x=c * d.w_x - sn * d.w_y,
        w_y=sn * d.w_x + c * d.w_y,
        # R H R^T
        w_xx=c * c * xx - 2 * c * sn * xy + sn * sn * yy,
        w_yy=sn * sn * xx + 2 * c * sn * xy + c * c * yy,
        w_xy=c * sn * (xx - yy) + (c * c - sn * sn) * xy,
    )
    t = s.target
    nt = LiftCoefficient(c * t.C_Lx - sn * t.C_Ly, sn * t.C_Lx + c * t.C_Ly)
    return replace(s, x0=c * s.x0 - sn * s.y0, y0=sn * s.x0 + c * s.y0, d=nd, target=nt)


def flip_sample(s: LiftSample) -> LiftSample:
    """Mirror a sample about the x-axis (y -> -y)."""
    d = s.d
    nd = DerivativeSet(d.w, d.w_x, -d.w_y, d.w_xx, d.w_yy, -d.w_xy)
    return replace(s, y0=-s.y0, d=nd, target=LiftCoefficient(s.target.C_Lx, -s.target.C_Ly))


def _rotation_count(delta_theta):
    if not delta_theta > 0:
        raise ConfigError("delta_theta must be positive")
    n = 2.0 * math.pi / delta_theta
    k = round(n)
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise ConfigError(f"delta_theta={math.degrees(delta_theta):g} deg does not divide 360 deg")
    return k


def augment(ds, delta_theta=math.radians(20.0), include_flip=True):
    """Rotate every sample through a full turn (optionally mirrored too).

    Output order is base sample, then mirror state, then rotation index;
    provenance ids get a ``#r<deg>[f]`` suffix.
    """
    k = _rotation_count(delta_theta)
    out = []
    for s in ds:
        base = s.provenance_id or "sample"
        for flipped in ((False, True) if include_flip else (False,)):
            src = flip_sample(s) if flipped else s
            for i in range(k):
                r = rotate_sample(src, i * delta_theta) if i else src
                deg = round(math.degrees(i * delta_theta), 6)
                out.append(replace(r, provenance_id=f"{base}#r{deg:g}{'f' if flipped else ''}"))
    return out


def _allocate(n, fractions):
    raw = [f * n for f in fractions]
    counts = [math.floor(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split(ds, spec: SplitSpec, group=True):
    """Partition samples into (train, val, test).

    With ``group`` all augmented images of a base sample (same provenance id
    before ``#``) land in the same part; sizes are then allocated in units of
    groups.  The shuffle uses numpy's PCG64 generator seeded by ``spec.seed``.
    """
    if not isinstance(spec, SplitSpec):
        raise ConfigError("spec must be a SplitSpec")
    if len(ds) < 3:
        raise DomainError("need at least 3 samples to split")
    if group:
        keys = {}
        for i, s in enumerate(ds):
            keys.setdefault(s.base_id, []).append(i)
        groups = list(keys.values())
    else:
        groups = [[i] for i in range(len(ds))]
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(len(groups))
    counts = _allocate(len(groups), spec.fractions)
    parts, start = [], 0
    for c in counts:
        idx = sorted(i for g in perm[start:start + c] for i in groups[g])
        parts.append([ds[i] for i in idx])
        start += c
    return tuple(parts)


# ---------------------------------------------------------------- array views


def to_arrays(samples):
    """Stack samples into (features (n, 6), targets (n, 2)) arrays."""
    if not samples:
        return np.zeros((0, 6)), np.zeros((0, 2))
    D = np.array([[s.d.w, s.d.w_x, s.d.w_y, s.d.w_xx, s.d.w_yy, s.d.w_xy] for s in samples])
    p = np.array([[s.rho, s.mu, s.a] for s in samples])
    X = nondim_features(DerivativeSet.from_array(D), p[:, 0], p[:, 1], p[:, 2]).as_array()
    Y = np.array([[s.target.C_Lx, s.target.C_Ly] for s in samples])
    return X, Y
