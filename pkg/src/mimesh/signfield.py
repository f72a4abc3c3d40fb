"""Local two-signed field over voxels near the surface.

For a voxel center q inside the outer envelope, the field value is

    w(q) = sum over cloud points x_i within `radius` of q of
           (x_i - q) . n_i / (|x_i - q|^3 + eps)

a winding-number-like sum restricted to a local neighborhood, so its sign
distinguishes the two sides of a locally manifold patch. Voxels with no
cloud point in range keep w = 0 and are flagged; the labeling stage resolves
them. Nothing is computed outside the envelope.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree

from .fields import GridSpec, ScalarField
from .sampling import OrientedPointCloud

log = logging.getLogger(__name__)

SGNF_MAGIC = b"SGNF"
SGNF_VERSION = 1

DEFAULT_RADIUS = 0.015
DEFAULT_EPS = 1e-8

_MASK_OMEGA1 = 1
_MASK_OMEGA2 = 2
_MASK_HAS_NEIGHBORS = 4

_QUERY_CHUNK = 65536


@dataclass
class SignField:
    """Voxelized two-signed field plus envelope membership masks."""

    spec: GridSpec
    w: np.ndarray               # float64, zero outside omega1
    inside_omega1: np.ndarray   # bool
    inside_omega2: np.ndarray   # bool, subset of omega1 by construction
    has_neighbors: np.ndarray   # bool, false where w is undefined (kept 0)

    def __post_init__(self):
        shape = self.spec.resolution
        for name in ("w", "inside_omega1", "inside_omega2", "has_neighbors"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} shape {arr.shape} != grid {shape}")
        if np.any(self.inside_omega2 & ~self.inside_omega1):
            raise ValueError("omega2 must be contained in omega1")
        if not np.all(np.isfinite(self.w[self.inside_omega1])):
            raise ValueError("w must be finite inside omega1")


def envelope_mask(field: ScalarField, spec: GridSpec, r: float,
                  chunk: int = 1 << 20) -> np.ndarray:
    """Boolean grid of voxels whose center distance is below ``r``."""
    if r <= 0:
        raise ValueError("envelope radius must be positive")
    centers = spec.all_centers()
    vals = np.empty(len(centers))
    for s in range(0, len(centers), chunk):
        vals[s:s + chunk] = field.eval(centers[s:s + chunk])
    return (vals < r).reshape(spec.resolution, order="F")


def local_two_signed_field(cloud: OrientedPointCloud, spec: GridSpec,
                           omega1: np.ndarray, radius: float = DEFAULT_RADIUS,
                           eps: float = DEFAULT_EPS, omega2: np.ndarray = None,
                           workers: int = 1) -> SignField:
    """Evaluate the two-signed sum at every voxel center inside ``omega1``.

    ``omega2`` (if given) is stored on the result for downstream stages.
    Voxel evaluation shares one read-only spatial index; queries run in
    chunks to bound memory.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if len(cloud) == 0:
        raise ValueError("cloud must be non-empty")
    w = np.zeros(spec.resolution, dtype=np.float64)
    has = np.zeros(spec.resolution, dtype=bool)
    idx = np.argwhere(omega1)
    if len(idx):
        centers = spec.center(idx)
        tree = cKDTree(cloud.points)
        vals = np.empty(len(centers))
        counts = np.empty(len(centers), dtype=np.int64)
        for s in range(0, len(centers), _QUERY_CHUNK):
            c = centers[s:s + _QUERY_CHUNK]
            vals[s:s + _QUERY_CHUNK], counts[s:s + _QUERY_CHUNK] = _sum_chunk(
                tree, cloud, c, radius, eps, workers)
        w[omega1] = vals
        has[omega1] = counts > 0
        n_empty = int((counts == 0).sum())
        if n_empty:
            log.debug("sign field: %d/%d envelope voxels had empty neighborhoods",
                      n_empty, len(centers))
    if omega2 is None:
        omega2 = np.zeros(spec.resolution, dtype=bool)
    return SignField(spec, w, omega1.copy(), omega2 & omega1, has)


def _sum_chunk(tree, cloud, centers, radius, eps, workers):
    lists = tree.query_ball_point(centers, radius, workers=workers,
                                  return_sorted=True)
    counts = np.fromiter((len(l) for l in lists), dtype=np.int64,
                         count=len(lists))
    total = int(counts.sum())
    if total == 0:
        return np.zeros(len(centers)), counts
    flat = np.fromiter((i for l in lists for i in l), dtype=np.int64, count=total)
    qi = np.repeat(np.arange(len(centers)), counts)
    v = cloud.points[flat] - centers[qi]
    r = np.linalg.norm(v, axis=1)
    contrib = np.einsum("ij,ij->i", v, cloud.normals[flat]) / (r ** 3 + eps)
    return np.bincount(qi, weights=contrib, minlength=len(centers)), counts


# ---------------------------------------------------------------------------
# SGNF dump: UDFG-style header, f32 w values x-fastest, then a u8 mask
# channel (bit0 omega1, bit1 omega2, bit2 has-neighbors).
# ---------------------------------------------------------------------------

def write_sgnf(path, sf: SignField) -> None:
    spec = sf.spec
    mask = (sf.inside_omega1.astype(np.uint8) * _MASK_OMEGA1
            | sf.inside_omega2.astype(np.uint8) * _MASK_OMEGA2
            | sf.has_neighbors.astype(np.uint8) * _MASK_HAS_NEIGHBORS)
    with open(path, "wb") as fh:
        fh.write(SGNF_MAGIC)
        fh.write(struct.pack("<I", SGNF_VERSION))
        fh.write(struct.pack("<3I", *spec.resolution))
        fh.write(struct.pack("<6d", *spec.bbox[0], *spec.bbox[1]))
        fh.write(sf.w.astype("<f4").ravel(order="F").tobytes())
        fh.write(mask.ravel(order="F").tobytes())


def read_sgnf(path) -> SignField:
    with open(path, "rb") as fh:
        if fh.read(4) != SGNF_MAGIC:
            raise ValueError("not a SGNF file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != SGNF_VERSION:
            raise ValueError(f"unsupported SGNF version {version}")
        dims = struct.unpack("<3I", fh.read(12))
        bb = struct.unpack("<6d", fh.read(48))
        n = dims[0] * dims[1] * dims[2]
        w = np.frombuffer(fh.read(4 * n), dtype="<f4").astype(np.float64)
        mask = np.frombuffer(fh.read(n), dtype=np.uint8)
    spec = GridSpec(dims, np.asarray(bb).reshape(2, 3))
    shape = dims
    return SignField(
        spec,
        w.reshape(shape, order="F"),
        (mask & _MASK_OMEGA1).astype(bool).reshape(shape, order="F"),
        (mask & _MASK_OMEGA2).astype(bool).reshape(shape, order="F"),
        (mask & _MASK_HAS_NEIGHBORS).astype(bool).reshape(shape, order="F"),
    )
