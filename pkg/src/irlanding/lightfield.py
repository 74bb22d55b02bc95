"""IR light fields: analytic bulb emitters, measured grids, occlusion and
single-bounce diffuse reflection.

Positions are numpy arrays of shape ``(3,)`` (or ``(N, 3)`` for batches) in
meters; intensities are arbitrary units (au). The landing station sits on
the floor and the bulb emits upward along ``+z`` unless told otherwise.
"""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

__all__ = [
    "vec3",
    "normalize",
    "LightSource",
    "MeasuredFieldGrid",
    "Surface",
    "Environment",
    "GridFormatError",
    "FitError",
    "DegenerateFieldError",
    "los_visible",
    "direct_irradiance",
    "bounce_irradiance",
    "total_irradiance",
    "field_gradient",
    "load_field_grid",
    "save_field_grid",
    "sample_source_grid",
    "LambertianBulbRegressor",
    "fit_bulb_model",
]

_SEG_EPS = 1e-9  # parametric endpoint exclusion for segment tests
_EDGE_EPS = 1e-12  # grazing contact at a rectangle edge counts as visible


def vec3(x, y=None, z=None) -> np.ndarray:
    if y is None:
        arr = np.asarray(x, dtype=float).reshape(3)
    else:
        arr = np.array([x, y, z], dtype=float)
    return arr


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("cannot normalize a zero vector")
    return v / n


def _points(p) -> tuple[np.ndarray, bool]:
    arr = np.asarray(p, dtype=float)
    single = arr.ndim == 1
    return np.atleast_2d(arr), single


# ---------------------------------------------------------------------------
# Emitters


@dataclass(frozen=True)
class LightSource:
    """Generalized Lambertian emitter, ``power * cos(theta)**m / d**2``."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    power: float = 1.0
    lambert_exponent: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position", vec3(self.position))
        object.__setattr__(self, "axis", normalize(vec3(self.axis)))
        if not self.power > 0:
            raise ValueError("power must be > 0")
        if not self.lambert_exponent >= 0:
            raise ValueError("lambert_exponent must be >= 0")

    @property
    def emitter_position(self) -> np.ndarray:
        return self.position

    def intensity(self, points: np.ndarray) -> np.ndarray:
        """Unoccluded irradiance (normal to the ray) at ``points``, shape (N,)."""
        r = points - self.position
        d2 = np.einsum("ij,ij->i", r, r)
        if np.any(d2 <= 0):
            raise ValueError("query point coincides with the source position")
        d = np.sqrt(d2)
        cos_t = (r @ self.axis) / d
        out = np.zeros(len(points))
        lit = cos_t > 0
        m = self.lambert_exponent
        out[lit] = self.power * cos_t[lit] ** m / d2[lit]
        return out


@dataclass(frozen=True)
class MeasuredFieldGrid:
    """Regularly sampled intensity field with trilinear interpolation.

    ``samples`` has shape ``(nx, ny, nz)``. An axis with a single node is
    treated as extruded: the field does not vary along it. That is how a
    one-height measurement slice behaves when the drone changes altitude.
    ``source_position`` is where the emitter sits, used for occlusion and
    for the incidence direction seen by photodiodes.
    """

    origin: np.ndarray
    spacing: tuple
    samples: np.ndarray
    label: str = ""
    source_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "origin", vec3(self.origin))
        object.__setattr__(self, "source_position", vec3(self.source_position))
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError("spacing must be three positive values")
        object.__setattr__(self, "spacing", spacing)
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 3:
            raise ValueError("samples must have shape (nx, ny, nz)")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if np.any(samples < 0):
            raise ValueError("samples must be >= 0")
        if samples.shape[0] < 2 or samples.shape[1] < 2:
            raise ValueError("grid needs at least 2 nodes along x and y")
        samples = samples.copy()
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.samples.shape

    @property
    def emitter_position(self) -> np.ndarray:
        return self.source_position

    def axis_coordinates(self, axis: int) -> np.ndarray:
        n = self.dims[axis]
        return self.origin[axis] + self.spacing[axis] * np.arange(n)

    def node_positions(self) -> np.ndarray:
        """All node positions in x-fastest order, shape (nx*ny*nz, 3)."""
        xs, ys, zs = (self.axis_coordinates(a) for a in range(3))
        Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def node_values(self) -> np.ndarray:
        """Samples in the same x-fastest order as :meth:`node_positions`."""
        return self.samples.transpose(2, 1, 0).ravel()

    def intensity(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        frac = (pts - self.origin) / np.asarray(self.spacing)
        inside = np.ones(len(pts), dtype=bool)
        idx0 = np.zeros((len(pts), 3), dtype=int)
        w = np.zeros((len(pts), 3))
        for a in range(3):
            n = self.dims[a]
            if n == 1:
                continue
            f = frac[:, a]
            inside &= (f >= -1e-12) & (f <= n - 1 + 1e-12)
            f = np.clip(f, 0.0, n - 1)
            i0 = np.minimum(np.floor(f).astype(int), n - 2)
            idx0[:, a] = i0
            w[:, a] = f - i0
        out = np.zeros(len(pts))
        s = self.samples
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    if dz and self.dims[2] == 1:
                        continue
                    wt = (
                        (w[:, 0] if dx else 1 - w[:, 0])
                        * (w[:, 1] if dy else 1 - w[:, 1])
                        * ((w[:, 2] if dz else 1 - w[:, 2]) if self.dims[2] > 1 else 1.0)
                    )
                    out += wt * s[idx0[:, 0] + dx, idx0[:, 1] + dy, idx0[:, 2] + dz]
        out[~inside] = 0.0
        return out


# ---------------------------------------------------------------------------
# Geometry


@dataclass(frozen=True)
class Surface:
    """Rectangular panel given by four corners in perimeter order."""

    corners: np.ndarray
    reflectance: float = 0.5
    opaque: bool = True

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=float)
        if c.shape != (4, 3):
            raise ValueError("a surface needs exactly 4 corners")
        if not 0.0 <= self.reflectance <= 1.0:
            raise ValueError("reflectance must lie in [0, 1]")
        e1 = c[1] - c[0]
        e2 = c[3] - c[0]
        n = np.cross(e1, e2)
        if np.linalg.norm(n) == 0:
            raise ValueError("degenerate surface")
        n = n / np.linalg.norm(n)
        if abs((c[2] - c[0]) @ n) > 1e-6:
            raise ValueError("surface corners are not coplanar")
        if np.linalg.norm(c[2] - (c[0] + e1 + e2)) > 1e-6:
            raise ValueError("surface corners do not form a rectangle")
        if abs(e1 @ e2) > 1e-6 * np.linalg.norm(e1) * np.linalg.norm(e2):
            raise ValueError("surface corners do not form a rectangle")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "corners", c)

    @classmethod
    def from_extent(cls, axis: str, value: float, lo: tuple, hi: tuple,
                    reflectance: float = 0.5, opaque: bool = True) -> "Surface":
        """Axis-aligned rectangle in the plane ``axis = value``.

        ``lo`` and ``hi`` give the bounds of the two remaining coordinates in
        x, y, z order, e.g. ``Surface.from_extent("y", 1.0, (-1, 0), (1, 2))``
        spans x in [-1, 1], z in [0, 2] at y = 1.
        """
        k = "xyz".index(axis)
        free = [i for i in range(3) if i != k]

        def pt(u, v):
            p = [0.0, 0.0, 0.0]
            p[k] = value
            p[free[0]] = u
            p[free[1]] = v
            return p

        (u0, v0), (u1, v1) = lo, hi
        corners = [pt(u0, v0), pt(u1, v0), pt(u1, v1), pt(u0, v1)]
        return cls(np.array(corners), reflectance=reflectance, opaque=opaque)

    @property
    def normal(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[1] - c[0], c[3] - c[0])
        return n / np.linalg.norm(n)

    @property
    def area(self) -> float:
        c = self.corners
        return float(np.linalg.norm(c[1] - c[0]) * np.linalg.norm(c[3] - c[0]))

    def patches(self, edge: float) -> tuple[np.ndarray, np.ndarray]:
        """Patch centers (P, 3) and areas (P,) for a tiling with edge <= ``edge``."""
        c = self.corners
        e1, e2 = c[1] - c[0], c[3] - c[0]
        n1 = max(1, int(math.ceil(np.linalg.norm(e1) / edge - 1e-9)))
        n2 = max(1, int(math.ceil(np.linalg.norm(e2) / edge - 1e-9)))
        u = (np.arange(n1) + 0.5) / n1
        v = (np.arange(n2) + 0.5) / n2
        U, V = np.meshgrid(u, v, indexing="ij")
        centers = c[0] + U.reshape(-1, 1) * e1 + V.reshape(-1, 1) * e2
        areas = np.full(len(centers), self.area / (n1 * n2))
        return centers, areas


class _Occluders:
    """Stacked opaque rectangles for vectorized segment tests."""

    def __init__(self, surfaces):
        opaque = [s for s in surfaces if s.opaque]
        self.count = len(opaque)
        if not opaque:
            return
        c = np.array([s.corners for s in opaque])
        self.c0 = c[:, 0]
        self.e1 = c[:, 1] - c[:, 0]
        self.e2 = c[:, 3] - c[:, 0]
        n = np.cross(self.e1, self.e2)
        self.n = n / np.linalg.norm(n, axis=1, keepdims=True)
        self.e1_n2 = np.einsum("ij,ij->i", self.e1, self.e1)
        self.e2_n2 = np.einsum("ij,ij->i", self.e2, self.e2)
        self.c0_n = np.einsum("ij,ij->i", self.c0, self.n)
        self.c0_e1 = np.einsum("ij,ij->i", self.c0, self.e1)
        self.c0_e2 = np.einsum("ij,ij->i", self.c0, self.e2)

    def blocked(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Boolean mask over broadcast segments ``a -> b`` (shape (..., 3))."""
        a, b = np.broadcast_arrays(a, b)
        shape = a.shape[:-1]
        if self.count == 0:
            return np.zeros(shape, dtype=bool)
        a = a.reshape(-1, 3)
        d = b.reshape(-1, 3) - a
        denom = d @ self.n.T
        num = self.c0_n - a @ self.n.T
        ok = np.abs(denom) > 1e-15
        t = np.where(ok, num / np.where(ok, denom, 1.0), -1.0)
        ok &= (t > _SEG_EPS) & (t < 1 - _SEG_EPS)
        # hit point relative to each rectangle's origin, projected on its edges
        u = ((a @ self.e1.T) + t * (d @ self.e1.T) - self.c0_e1) / self.e1_n2
        v = ((a @ self.e2.T) + t * (d @ self.e2.T) - self.c0_e2) / self.e2_n2
        hit = ok & (u > _EDGE_EPS) & (u < 1 - _EDGE_EPS) & (v > _EDGE_EPS) & (v < 1 - _EDGE_EPS)
        return hit.any(axis=-1).reshape(shape)


class Environment:
    """Immutable scene: one emitter, reflecting/occluding panels, ambient DC.

    Surface patches lit by the source are precomputed at construction so
    that bounce queries only pay for the patch-to-point leg.
    """

    def __init__(self, source, surfaces=(), ambient_dc: float = 0.0,
                 patch_size: float = 0.05, name: str = ""):
        if ambient_dc < 0:
            raise ValueError("ambient_dc must be >= 0")
        if patch_size <= 0:
            raise ValueError("patch_size must be > 0")
        self.source = source
        self.surfaces = tuple(surfaces)
        self.ambient_dc = float(ambient_dc)
        self.patch_size = float(patch_size)
        self.name = name
        self._occ = _Occluders(self.surfaces)
        src = source.emitter_position
        for s in self.surfaces:
            if s.opaque and _point_inside_surface(src, s):
                raise ValueError("source position lies inside a surface")
        self._build_patches()

    def _build_patches(self):
        src = self.source.emitter_position
        centers, areas, normals, rho = [], [], [], []
        for s in self.surfaces:
            if s.reflectance == 0:
                continue
            c, a = s.patches(self.patch_size)
            n = s.normal
            if (src - c[0]) @ n < 0:
                n = -n
            centers.append(c)
            areas.append(a)
            normals.append(np.repeat(n[None], len(c), axis=0))
            rho.append(np.full(len(c), s.reflectance))
        if not centers:
            self.patch_centers = np.zeros((0, 3))
            self.patch_normals = np.zeros((0, 3))
            self.patch_exitance = np.zeros(0)
            self.patch_areas = np.zeros(0)
            return
        c = np.concatenate(centers)
        n = np.concatenate(normals)
        a = np.concatenate(areas)
        rho = np.concatenate(rho)
        e_dir = _direct(c, self)
        to_src = src - c
        cos_in = np.einsum("ij,ij->i", to_src, n) / np.linalg.norm(to_src, axis=1)
        exitance = rho * e_dir * np.clip(cos_in, 0, None) * a / np.pi
        lit = exitance > 0
        self.patch_centers = c[lit]
        self.patch_normals = n[lit]
        self.patch_areas = a[lit]
        # rho * E * cos_in * A / pi; divide by r**2 and multiply cos_out per query
        self.patch_exitance = exitance[lit]

    def blocked(self, a, b) -> np.ndarray:
        return self._occ.blocked(np.asarray(a, float), np.asarray(b, float))

    def __repr__(self):
        return (f"Environment(name={self.name!r}, surfaces={len(self.surfaces)}, "
                f"ambient_dc={self.ambient_dc})")


def _point_inside_surface(p, s: Surface) -> bool:
    c = s.corners
    n = s.normal
    if abs((p - c[0]) @ n) > 1e-9:
        return False
    e1, e2 = c[1] - c[0], c[3] - c[0]
    u = (p - c[0]) @ e1 / (e1 @ e1)
    v = (p - c[0]) @ e2 / (e2 @ e2)
    return 0 < u < 1 and 0 < v < 1


# ---------------------------------------------------------------------------
# Queries


def los_visible(a, b, env: Environment) -> bool:
    a, b = vec3(a), vec3(b)
    if np.allclose(a, b, rtol=0, atol=0):
        raise ValueError("los_visible needs two distinct points")
    return not bool(env.blocked(a, b))


def _direct(points: np.ndarray, env: Environment) -> np.ndarray:
    src = env.source.emitter_position
    val = env.source.intensity(points)
    if env._occ.count:
        nz = val > 0
        if np.any(nz):
            val[nz] = np.where(env.blocked(src, points[nz]), 0.0, val[nz])
    return val


def direct_irradiance(p, env: Environment):
    """Direct irradiance from the station, zero when occluded.

    Accepts a single point ``(3,)`` (returns float) or a batch ``(N, 3)``.
    """
    pts, single = _points(p)
    if np.any(np.linalg.norm(pts - env.source.emitter_position, axis=1) == 0):
        raise ValueError("query point coincides with the source position")
    val = _direct(pts, env)
    return float(val[0]) if single else val


def bounce_components(points, env: Environment) -> tuple[np.ndarray, np.ndarray]:
    """Per-patch single-bounce contributions at each query point.

    Returns ``(values, directions)`` with shapes ``(Q, P)`` and ``(Q, P, 3)``;
    ``directions`` are unit vectors from the query point toward each patch.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    c = env.patch_centers
    if len(c) == 0:
        return np.zeros((len(pts), 0)), np.zeros((len(pts), 0, 3))
    r = pts[:, None, :] - c[None, :, :]
    d2 = np.einsum("qpj,qpj->qp", r, r)
    d = np.sqrt(d2)
    cos_out = np.einsum("qpj,pj->qp", r, env.patch_normals) / d
    val = np.where(cos_out > 0, env.patch_exitance * cos_out / d2, 0.0)
    if env._occ.count:
        nz = val > 0
        if np.any(nz):
            qi, pi = np.nonzero(nz)
            hit = env.blocked(c[pi], pts[qi])
            val[qi[hit], pi[hit]] = 0.0
    dirs = -r / d[..., None]
    return val, dirs


def bounce_irradiance(p, env: Environment):
    pts, single = _points(p)
    val, _ = bounce_components(pts, env)
    out = val.sum(axis=1)
    return float(out[0]) if single else out


def total_irradiance(p, env: Environment):
    pts, single = _points(p)
    out = _direct(pts, env) + bounce_irradiance(pts, env) + env.ambient_dc
    return float(out[0]) if single else out


def field_gradient(p, env: Environment, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of :func:`total_irradiance` (au/m)."""
    p = vec3(p)
    offsets = np.vstack([np.eye(3) * h, -np.eye(3) * h])
    vals = total_irradiance(p + offsets, env)
    return (vals[:3] - vals[3:]) / (2 * h)


# ---------------------------------------------------------------------------
# Grid CSV


class GridFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message if row is None else f"{message} at row {row}")


_HEADER = ["x", "y", "z", "intensity"]


def load_field_grid(path) -> MeasuredFieldGrid:
    """Read a field-grid CSV (x-fastest rows, ``#`` metadata comments).

    Row numbers in errors are 1-based file line numbers.
    """
    meta: dict[str, str] = {}
    rows: list[tuple[int, list[float]]] = []
    header_seen = False
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                body = text[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            cells = [c.strip() for c in next(csv.reader([text]))]
            if not header_seen:
                if cells != _HEADER:
                    raise GridFormatError("malformed header, expected x,y,z,intensity", lineno)
                header_seen = True
                continue
            if len(cells) != 4:
                raise GridFormatError(f"expected 4 columns, got {len(cells)}", lineno)
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                raise GridFormatError("non-numeric value", lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise GridFormatError("non-finite sample", lineno)
            if vals[3] < 0:
                raise GridFormatError("negative sample", lineno)
            rows.append((lineno, vals))
    if not header_seen:
        raise GridFormatError("missing header", 1)
    if len(rows) < 4:
        raise GridFormatError("too few rows", rows[-1][0] if rows else 1)

    data = np.array([r[1] for r in rows])
    lines = [r[0] for r in rows]

    def run_length(col: int, stride: int) -> int:
        first = data[0, col]
        n = 1
        while n * stride < len(data) and data[n * stride, col] != first:
            n += 1
        return n

    nx = run_length(0, 1)
    ny = run_length(1, nx)
    if len(data) % (nx * ny):
        raise GridFormatError(
            f"row count {len(data)} is not a multiple of nx*ny={nx * ny}", lines[-1])
    nz = len(data) // (nx * ny)
    if nx < 2 or ny < 2:
        raise GridFormatError("grid needs at least 2 nodes along x and y", lines[0])

    origin = data[0, :3]
    spacing = [1.0, 1.0, 1.0]
    for a, n, stride in ((0, nx, 1), (1, ny, nx), (2, nz, nx * ny)):
        if n > 1:
            spacing[a] = data[stride, a] - origin[a]
            if spacing[a] <= 0:
                raise GridFormatError(
                    f"non-monotonic {'xyz'[a]} coordinate", lines[stride])
    idx = np.arange(len(data))
    expected = np.column_stack([
        origin[0] + spacing[0] * (idx % nx),
        origin[1] + spacing[1] * ((idx // nx) % ny),
        origin[2] + spacing[2] * (idx // (nx * ny)),
    ])
    tol = 1e-6 * max(1.0, float(np.max(np.abs(data[:, :3]))))
    bad = np.nonzero(np.any(np.abs(expected - data[:, :3]) > tol, axis=1))[0]
    if len(bad):
        raise GridFormatError("non-monotonic or irregular coordinates", lines[bad[0]])

    samples = data[:, 3].reshape(nz, ny, nx).transpose(2, 1, 0)
    if nz == 1:
        spacing[2] = float(meta.get("dz", 1.0))
    source = vec3([float(v) for v in meta["source"].split()]) if "source" in meta else np.zeros(3)
    return MeasuredFieldGrid(origin=origin, spacing=tuple(spacing), samples=samples,
                             label=meta.get("label", ""), source_position=source, meta=meta)


def save_field_grid(grid: MeasuredFieldGrid, path) -> None:
    """Write ``grid`` losslessly (``repr`` floats); atomic replace."""
    lines = []
    meta = dict(grid.meta)
    meta["label"] = grid.label
    meta["source"] = " ".join(repr(float(v)) for v in grid.source_position)
    if grid.dims[2] == 1:
        meta.setdefault("height", repr(float(grid.origin[2])))
    for k, v in meta.items():
        lines.append(f"# {k}={v}")
    lines.append(",".join(_HEADER))
    for p, v in zip(grid.node_positions(), grid.node_values()):
        lines.append(",".join(repr(float(x)) for x in (*p, v)))
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sample_source_grid(source: LightSource, xs, ys, zs, label: str = "") -> MeasuredFieldGrid:
    """Sample an analytic source on a regular grid (exact node values)."""
    xs, ys, zs = (np.asarray(v, float) for v in (xs, ys, zs))
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    vals = source.intensity(pts).reshape(X.shape)
    spacing = (xs[1] - xs[0], ys[1] - ys[0], zs[1] - zs[0] if len(zs) > 1 else 1.0)
    return MeasuredFieldGrid(origin=(xs[0], ys[0], zs[0]), spacing=spacing, samples=vals,
                             label=label, source_position=source.position)


# ---------------------------------------------------------------------------
# Bulb calibration


class FitError(RuntimeError):
    def __init__(self, message: str, best=None, residual: float = math.nan):
        super().__init__(message)
        self.best = best
        self.residual = residual


class DegenerateFieldError(FitError):
    pass


class LambertianBulbRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of ``power * cos(theta)**m / d**2`` to point samples.

    Fits power, exponent and emitter position (emission axis fixed to +z)
    by minimizing the relative residual over samples above
    ``floor_fraction * max(y)``.

    Parameters
    ----------
    floor_fraction : float
        Samples below this fraction of the peak are treated as noise floor.
    min_samples : int
        Minimum number of samples above the floor.
    max_nfev : int
        Function-evaluation budget per start.
    """

    def __init__(self, floor_fraction=0.01, min_samples=25, max_nfev=4000):
        self.floor_fraction = floor_fraction
        self.min_samples = min_samples
        self.max_nfev = max_nfev

    @staticmethod
    def _model(theta, X):
        logp, m, sx, sy, sz = theta
        r = X - np.array([sx, sy, sz])
        d2 = np.einsum("ij,ij->i", r, r)
        cos_t = np.clip(r[:, 2] / np.sqrt(d2), 1e-12, None)
        return np.exp(logp) * cos_t ** m / d2

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[1] != 3:
            raise ValueError("X must have 3 columns (x, y, z)")
        if np.ptp(y) <= 1e-9 * max(np.max(np.abs(y)), 1e-300):
            raise DegenerateFieldError("constant field: no decay information")
        keep = y > self.floor_fraction * y.max()
        if keep.sum() < self.min_samples:
            raise ValueError(f"need >= {self.min_samples} samples above the noise floor")
        Xk, yk = X[keep], y[keep]

        def resid(theta):
            return self._model(theta, Xk) / yk - 1.0

        w = yk / yk.sum()
        cx, cy = w @ Xk[:, 0], w @ Xk[:, 1]
        zmin = Xk[:, 2].min()
        best = None
        for dz in (0.5, 1.0, 2.0):
            sz = zmin - dz
            d2 = np.einsum("ij,ij->i", Xk - [cx, cy, sz], Xk - [cx, cy, sz])
            logp = float(np.log(np.median(yk * d2)))
            for m0 in (0.5, 2.0):
                x0 = np.array([logp, m0, cx, cy, sz])
                lo = [-np.inf, 0.0, -np.inf, -np.inf, -np.inf]
                hi = [np.inf, 100.0, np.inf, np.inf, zmin - 1e-3]
                try:
                    res = least_squares(resid, x0, bounds=(lo, hi), method="trf",
                                        x_scale="jac", max_nfev=self.max_nfev,
                                        xtol=1e-14, ftol=1e-14, gtol=1e-14)
                except ValueError:
                    continue
                if best is None or res.cost < best.cost:
                    best = res
        if best is None:
            raise FitError("least-squares solver failed to start")
        rms = float(np.sqrt(np.mean(best.fun ** 2)))
        if best.status <= 0:
            raise FitError("fit did not converge within the iteration budget",
                           best=best.x, residual=rms)
        self.params_ = best.x
        self.power_ = float(np.exp(best.x[0]))
        self.lambert_exponent_ = float(best.x[1])
        self.position_ = best.x[2:].copy()
        self.residual_ = rms
        self.n_samples_fit_ = int(keep.sum())
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        return self._model(self.params_, X)

    def to_source(self) -> LightSource:
        check_is_fitted(self, "params_")
        return LightSource(position=self.position_, power=self.power_,
                           lambert_exponent=self.lambert_exponent_)


def fit_bulb_model(grid: MeasuredFieldGrid, **kwargs) -> tuple[LightSource, float]:
    """Calibrate the analytic bulb against a measured grid.

    Returns the fitted source and the RMS relative residual.
    """
    est = LambertianBulbRegressor(**kwargs).fit(grid.node_positions(), grid.node_values())
    return est.to_source(), est.residual_
