"""Unsigned distance field sources: analytic fixtures, sampled grids, point sets.

All fields share one evaluable interface: ``eval`` maps points in world units
to non-negative distances, ``gradient`` to a direction of steepest ascent.
Point arguments may be a single ``(3,)`` point or an ``(n, 3)`` batch; results
follow the input shape. Fields are immutable after construction and safe for
concurrent read-only evaluation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_BBOX = np.array([[-0.6, -0.6, -0.6], [0.6, 0.6, 0.6]], dtype=np.float64)

UDFG_MAGIC = b"UDFG"
UDFG_VERSION = 1

_EVAL_CHUNK = 1 << 20


def _as_points(p):
    """Return (pts (n,3) float64, single flag)."""
    a = np.asarray(p, dtype=np.float64)
    if a.ndim == 1:
        return a.reshape(1, 3), True
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"expected (3,) or (n,3) points, got shape {a.shape}")
    return a, False


@dataclass(frozen=True)
class GridSpec:
    """Regular voxel grid over an axis-aligned box.

    Voxel ``(i, j, k)`` has its center at ``bmin + (index + 0.5) * voxel_size``;
    the index/center mapping is exactly invertible at centers.
    """

    resolution: tuple[int, int, int]
    bbox: np.ndarray = dc_field(default_factory=lambda: DEFAULT_BBOX.copy())

    def __post_init__(self):
        res = tuple(int(r) for r in np.atleast_1d(self.resolution).repeat(
            3 if np.ndim(self.resolution) == 0 else 1)[:3])
        if len(res) != 3:
            res = (res[0],) * 3
        if any(r < 1 for r in res):
            raise ValueError(f"resolution must be positive, got {res}")
        object.__setattr__(self, "resolution", res)
        bb = np.asarray(self.bbox, dtype=np.float64).reshape(2, 3)
        if np.any(bb[1] <= bb[0]):
            raise ValueError("bbox max must exceed bbox min")
        object.__setattr__(self, "bbox", bb)

    @property
    def voxel_size(self):
        return (self.bbox[1] - self.bbox[0]) / np.asarray(self.resolution)

    @property
    def uniform_voxel(self) -> float:
        v = self.voxel_size
        return float(v[0]) if np.allclose(v, v[0]) else float(v.mean())

    def center(self, index):
        idx = np.asarray(index, dtype=np.float64)
        return self.bbox[0] + (idx + 0.5) * self.voxel_size

    def index_of(self, p):
        pts = np.asarray(p, dtype=np.float64)
        return np.rint((pts - self.bbox[0]) / self.voxel_size - 0.5).astype(np.int64)

    def all_centers(self):
        """Voxel centers as an (nx*ny*nz, 3) array, x fastest."""
        nx, ny, nz = self.resolution
        ax = [self.bbox[0][d] + (np.arange(self.resolution[d]) + 0.5) * self.voxel_size[d]
              for d in range(3)]
        gx, gy, gz = np.meshgrid(ax[0], ax[1], ax[2], indexing="ij")
        return np.column_stack([gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")])


class ScalarField:
    """Base class: unsigned distance ``eval`` plus gradient access."""

    kind = "abstract"

    def __init__(self, bbox=None):
        self.bbox = np.asarray(bbox if bbox is not None else DEFAULT_BBOX,
                               dtype=np.float64).reshape(2, 3)

    def _eval(self, pts):
        raise NotImplementedError

    def eval(self, p):
        pts, single = _as_points(p)
        d = self._eval(pts)
        return float(d[0]) if single else d

    def has_exact_gradient(self) -> bool:
        return False

    def default_fd_step(self) -> float:
        return 1e-4

    def gradient(self, p, h=None):
        """Gradient of the distance; central finite differences by default.

        Analytic fixtures override this with closed forms (exact away from
        surface/medial ties, zero at ties).
        """
        return finite_difference_gradient(self, p, h)


def finite_difference_gradient(field: ScalarField, p, h=None):
    """Central finite-difference gradient, per axis, step ``h``."""
    if h is None:
        h = field.default_fd_step()
    if h <= 0:
        raise ValueError("FD step h must be positive")
    pts, single = _as_points(p)
    g = np.empty_like(pts)
    for ax in range(3):
        dp = np.zeros(3)
        dp[ax] = h
        g[:, ax] = (field._eval(pts + dp) - field._eval(pts - dp)) / (2.0 * h)
    return g[0] if single else g


def eval(field: ScalarField, p):
    """Unsigned distance at ``p`` (module-level op form)."""
    return field.eval(p)


def gradient(field: ScalarField, p, h=None):
    """Field gradient at ``p``.

    With ``h`` omitted, uses the field's exact gradient when one exists,
    otherwise central differences at the field's default step. With ``h``
    given, always uses central differences at that step.
    """
    if h is None and field.has_exact_gradient():
        return field.gradient(p)
    return finite_difference_gradient(field, p, h)


# ---------------------------------------------------------------------------
# Analytic fixtures
# ---------------------------------------------------------------------------

class AnalyticField(ScalarField):
    kind = "analytic-shape"

    def has_exact_gradient(self) -> bool:
        return True

    def _closest(self, pts):
        raise NotImplementedError

    def _eval(self, pts):
        return np.linalg.norm(pts - self._closest(pts), axis=1)

    def gradient(self, p, h=None):
        if h is not None:
            return finite_difference_gradient(self, p, h)
        pts, single = _as_points(p)
        v = pts - self._closest(pts)
        d = np.linalg.norm(v, axis=1)
        g = np.zeros_like(pts)
        ok = d > 1e-300
        g[ok] = v[ok] / d[ok, None]
        return g[0] if single else g


class _Plate:
    """Bounded planar patch: origin + u*e1 + v*e2 with clamped (u, v)."""

    def __init__(self, origin, e1, u_range, e2, v_range):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.e1 = np.asarray(e1, dtype=np.float64)
        self.e2 = np.asarray(e2, dtype=np.float64)
        self.u_range = u_range
        self.v_range = v_range

    def closest(self, pts):
        rel = pts - self.origin
        u = np.clip(rel @ self.e1, *self.u_range)
        v = np.clip(rel @ self.e2, *self.v_range)
        return self.origin + u[:, None] * self.e1 + v[:, None] * self.e2


class PlateUnionField(AnalyticField):
    """Union of bounded planar patches; distance is the min over patches."""

    def __init__(self, plates, bbox=None):
        super().__init__(bbox)
        self.plates = list(plates)

    def _closest(self, pts):
        best_cp = self.plates[0].closest(pts)
        best_d2 = np.sum((pts - best_cp) ** 2, axis=1)
        for plate in self.plates[1:]:
            cp = plate.closest(pts)
            d2 = np.sum((pts - cp) ** 2, axis=1)
            better = d2 < best_d2
            best_cp[better] = cp[better]
            best_d2[better] = d2[better]
        return best_cp


class SphereField(AnalyticField):
    """Distance to a sphere surface of radius r centered at the origin."""

    def __init__(self, radius=0.4, bbox=None):
        super().__init__(bbox)
        self.radius = float(radius)

    def _eval(self, pts):
        return np.abs(np.linalg.norm(pts, axis=1) - self.radius)

    def _closest(self, pts):
        n = np.linalg.norm(pts, axis=1)
        cp = np.zeros_like(pts)
        ok = n > 1e-300
        cp[ok] = pts[ok] * (self.radius / n[ok])[:, None]
        cp[~ok] = (self.radius, 0.0, 0.0)
        return cp


class PlaneDiskField(AnalyticField):
    """Distance to a flat disk of given radius in the z=0 plane."""

    def __init__(self, radius=0.4, bbox=None):
        super().__init__(bbox)
        self.radius = float(radius)

    def _closest(self, pts):
        rho = np.hypot(pts[:, 0], pts[:, 1])
        scale = np.ones_like(rho)
        out = rho > self.radius
        scale[out] = self.radius / rho[out]
        cp = np.column_stack([pts[:, 0] * scale, pts[:, 1] * scale,
                              np.zeros(len(pts))])
        return cp


class PlaneField(AnalyticField):
    """Unbounded plane z = offset (test fixture building block)."""

    def __init__(self, offset=0.0, bbox=None):
        super().__init__(bbox)
        self.offset = float(offset)

    def _closest(self, pts):
        cp = pts.copy()
        cp[:, 2] = self.offset
        return cp


def _t_junction(half_size):
    a = half_size
    return [
        _Plate([0, 0, 0], [0, 1, 0], (-a, a), [0, 0, 1], (-a, a)),   # vertical plate x=0
        _Plate([0, 0, 0], [1, 0, 0], (0.0, a), [0, 1, 0], (-a, a)),  # half-plate z=0, x>=0
    ]


def _triple_junction(half_size):
    a = half_size
    plates = []
    for theta in (np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3):
        d = [np.cos(theta), np.sin(theta), 0.0]
        plates.append(_Plate([0, 0, 0], d, (0.0, a), [0, 0, 1], (-a, a)))
    return plates


def _two_parallel_planes(half_size, gap):
    a, z = half_size, gap / 2.0
    return [
        _Plate([0, 0, z], [1, 0, 0], (-a, a), [0, 1, 0], (-a, a)),
        _Plate([0, 0, -z], [1, 0, 0], (-a, a), [0, 1, 0], (-a, a)),
    ]


def _open_box_7(half_size):
    # Cube shell plus interior dividers at x=0 and z=+-a/3: the six interior
    # cells plus the single outer region give seven partitions.
    a = half_size
    x, y, z = [1, 0, 0], [0, 1, 0], [0, 0, 1]
    plates = [
        _Plate([a, 0, 0], y, (-a, a), z, (-a, a)),
        _Plate([-a, 0, 0], y, (-a, a), z, (-a, a)),
        _Plate([0, a, 0], x, (-a, a), z, (-a, a)),
        _Plate([0, -a, 0], x, (-a, a), z, (-a, a)),
        _Plate([0, 0, a], x, (-a, a), y, (-a, a)),
        _Plate([0, 0, -a], x, (-a, a), y, (-a, a)),
        _Plate([0, 0, 0], y, (-a, a), z, (-a, a)),            # divider x=0
        _Plate([0, 0, a / 3.0], x, (-a, a), y, (-a, a)),      # divider z=+a/3
        _Plate([0, 0, -a / 3.0], x, (-a, a), y, (-a, a)),     # divider z=-a/3
    ]
    return plates


FIXTURE_NAMES = ("plane-disk", "t-junction", "triple-junction", "sphere",
                 "open-box-7", "two-parallel-planes")


def make_fixture(name: str, **params) -> ScalarField:
    """Construct a named analytic fixture with an exact distance function.

    Parameters: ``radius`` (sphere, plane-disk), ``half_size`` (plate-based
    fixtures), ``gap`` (two-parallel-planes separation), ``bbox``.
    """
    bbox = params.pop("bbox", None)
    if name == "sphere":
        f = SphereField(params.pop("radius", 0.4), bbox)
    elif name == "plane-disk":
        f = PlaneDiskField(params.pop("radius", 0.4), bbox)
    elif name == "t-junction":
        f = PlateUnionField(_t_junction(params.pop("half_size", 0.4)), bbox)
    elif name == "triple-junction":
        f = PlateUnionField(_triple_junction(params.pop("half_size", 0.4)), bbox)
    elif name == "two-parallel-planes":
        f = PlateUnionField(_two_parallel_planes(params.pop("half_size", 0.4),
                                                 params.pop("gap", 0.1)), bbox)
    elif name == "open-box-7":
        f = PlateUnionField(_open_box_7(params.pop("half_size", 0.4)), bbox)
    else:
        raise ValueError(f"unknown fixture {name!r}; expected one of {FIXTURE_NAMES}")
    if params:
        raise ValueError(f"unused fixture parameters: {sorted(params)}")
    return f


# ---------------------------------------------------------------------------
# Gridded fields
# ---------------------------------------------------------------------------

class GridField(ScalarField):
    """Trilinear interpolation of samples stored at voxel centers.

    Queries outside the center lattice clamp to the boundary value. Exact at
    voxel centers by construction.
    """

    kind = "grid"

    def __init__(self, spec: GridSpec, values):
        super().__init__(spec.bbox)
        vals = np.asarray(values, dtype=np.float32)
        if vals.shape != spec.resolution:
            raise ValueError(f"values shape {vals.shape} != resolution {spec.resolution}")
        self.spec = spec
        self.values = vals

    def default_fd_step(self) -> float:
        return self.spec.uniform_voxel / 2.0

    def _eval(self, pts):
        spec = self.spec
        res = np.asarray(spec.resolution)
        t = (pts - spec.bbox[0]) / spec.voxel_size - 0.5
        t = np.clip(t, 0.0, res - 1.0)
        i0 = np.minimum(t.astype(np.int64), res - 2)
        i0 = np.maximum(i0, 0)
        f = t - i0
        # Degenerate axes (resolution 1): collapse interpolation weight.
        for ax in range(3):
            if res[ax] == 1:
                i0[:, ax] = 0
                f[:, ax] = 0.0
        v = self.values
        x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
        x1 = np.minimum(x0 + 1, res[0] - 1)
        y1 = np.minimum(y0 + 1, res[1] - 1)
        z1 = np.minimum(z0 + 1, res[2] - 1)
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c00 = v[x0, y0, z0] * (1 - fx) + v[x1, y0, z0] * fx
        c10 = v[x0, y1, z0] * (1 - fx) + v[x1, y1, z0] * fx
        c01 = v[x0, y0, z1] * (1 - fx) + v[x1, y0, z1] * fx
        c11 = v[x0, y1, z1] * (1 - fx) + v[x1, y1, z1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return (c0 * (1 - fz) + c1 * fz).astype(np.float64)


class PointSetField(ScalarField):
    """UDF induced by a point cloud: distance to the nearest point."""

    kind = "point-set"

    def __init__(self, points, bbox=None):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("point set must be non-empty")
        if bbox is None:
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            pad = 0.2 * max(float((hi - lo).max()), 1e-6)
            bbox = np.array([lo - pad, hi + pad])
        super().__init__(bbox)
        self.points = pts
        self._tree = cKDTree(pts)

    def default_fd_step(self) -> float:
        return 1e-4

    def _eval(self, pts):
        d, _ = self._tree.query(pts, k=1)
        return np.asarray(d, dtype=np.float64)


def sample_grid(field: ScalarField, spec: GridSpec) -> GridField:
    """Sample ``field`` at voxel centers into a grid field.

    Round-trip evaluation at centers reproduces the source values (up to f32
    storage); resampling a grid at its own spec is exact.
    """
    centers = spec.all_centers()
    vals = np.empty(len(centers), dtype=np.float32)
    for s in range(0, len(centers), _EVAL_CHUNK):
        vals[s:s + _EVAL_CHUNK] = field._eval(centers[s:s + _EVAL_CHUNK])
    nx, ny, nz = spec.resolution
    return GridField(spec, vals.reshape((nx, ny, nz), order="F"))


# ---------------------------------------------------------------------------
# UDFG file format: magic "UDFG", u32 version, u32 dims[3], f64 bbox[6]
# (min xyz, max xyz), f32 values x-fastest; little-endian throughout.
# ---------------------------------------------------------------------------

def write_udfg(path, grid: GridField) -> None:
    spec = grid.spec
    with open(path, "wb") as fh:
        fh.write(UDFG_MAGIC)
        fh.write(struct.pack("<I", UDFG_VERSION))
        fh.write(struct.pack("<3I", *spec.resolution))
        fh.write(struct.pack("<6d", *spec.bbox[0], *spec.bbox[1]))
        fh.write(grid.values.astype("<f4").ravel(order="F").tobytes())


def read_udfg(path) -> GridField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != UDFG_MAGIC:
            raise ValueError(f"not a UDFG file (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != UDFG_VERSION:
            raise ValueError(f"unsupported UDFG version {version}")
        dims = struct.unpack("<3I", fh.read(12))
        bb = struct.unpack("<6d", fh.read(48))
        n = dims[0] * dims[1] * dims[2]
        raw = fh.read(4 * n)
        if len(raw) != 4 * n:
            raise ValueError("truncated UDFG payload")
    values = np.frombuffer(raw, dtype="<f4").reshape(dims, order="F")
    spec = GridSpec(dims, np.asarray(bb).reshape(2, 3))
    return GridField(spec, values)
