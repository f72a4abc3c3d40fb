"""Quantitative evaluation: Chamfer distance, mesh sampling, topology counts.

All functions are pure and safe to call concurrently. The Chamfer value is
reported on a 1e4 scale, the convention under which the shipped fixture
thresholds are stated.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial import cKDTree

from .fields import PlaneDiskField, PlateUnionField, ScalarField, SphereField
from .mesh import LabeledMesh, edge_incidence_arrays

CHAMFER_SCALE = 1e4


@dataclass
class TopologyReport:
    boundary_edges: int      # incidence 1
    manifold_edges: int      # incidence 2
    nonmanifold_edges: int   # incidence >= 3
    components: int
    euler_characteristic: int
    label_count: int

    def as_dict(self):
        return asdict(self)


def chamfer_l2(a, b, workers: int = 1) -> float:
    """Symmetric mean squared nearest-neighbor distance between point sets.

    CD = mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2, scaled by 1e4.
    Nearest neighbors are exact (spatial index).
    """
    pa = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    pb = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("chamfer_l2 requires non-empty point sets")
    da, _ = cKDTree(pb).query(pa, k=1, workers=workers)
    db, _ = cKDTree(pa).query(pb, k=1, workers=workers)
    return float((np.mean(da ** 2) + np.mean(db ** 2)) * CHAMFER_SCALE)


def area_weighted_sample(mesh: LabeledMesh, n: int = 100_000,
                         seed: int = 0) -> np.ndarray:
    """Sample ``n`` points on the mesh, faces weighted by area."""
    if mesh.is_empty():
        raise ValueError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    fidx = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    tri = mesh.vertices[mesh.faces[fidx]]
    return (tri[:, 0] * (1 - u - v)[:, None] + tri[:, 1] * u[:, None]
            + tri[:, 2] * v[:, None])


class _FlatUnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def topology_report(mesh: LabeledMesh) -> TopologyReport:
    """Edge incidence classes, connected components, Euler characteristic.

    Counts are taken on the vertex-deduplicated mesh (exactly coincident
    vertices identified); components connect faces through shared edges.
    """
    if mesh.is_empty():
        return TopologyReport(0, 0, 0, 0, 0, 0)
    ref = mesh.compact()
    _, remap = np.unique(ref.vertices, axis=0, return_inverse=True)
    faces = remap[ref.faces]
    dedup = LabeledMesh(np.unique(ref.vertices, axis=0), faces, ref.face_labels)
    edges, counts = edge_incidence_arrays(dedup)
    boundary = int(np.sum(counts == 1))
    manifold = int(np.sum(counts == 2))
    nonmanifold = int(np.sum(counts >= 3))
    v = dedup.n_vertices
    e = len(edges)
    f = dedup.n_faces
    uf = _FlatUnionFind(f)
    fe = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]],
                                 faces[:, [2, 0]]]), axis=1)
    face_ids = np.tile(np.arange(f), 3)
    order = np.lexsort((fe[:, 1], fe[:, 0]))
    fe_sorted = fe[order]
    fid_sorted = face_ids[order]
    run_start = 0
    for i in range(1, len(fe_sorted) + 1):
        if i == len(fe_sorted) or (fe_sorted[i] != fe_sorted[run_start]).any():
            for j in range(run_start + 1, i):
                uf.union(int(fid_sorted[run_start]), int(fid_sorted[j]))
            run_start = i
    components = len({uf.find(i) for i in range(f)})
    labels = dedup.face_labels[dedup.face_labels > 0]
    label_count = int(len(np.unique(labels))) if len(labels) else 0
    return TopologyReport(boundary, manifold, nonmanifold, components,
                          v - e + f, label_count)


# ---------------------------------------------------------------------------
# Analytic reference sampling for fixtures
# ---------------------------------------------------------------------------

def analytic_surface_samples(field: ScalarField, n: int, seed: int = 0) -> np.ndarray:
    """Uniform area samples on an analytic fixture's surface."""
    rng = np.random.default_rng(seed)
    if isinstance(field, SphereField):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * field.radius
    if isinstance(field, PlaneDiskField):
        r = field.radius * np.sqrt(rng.random(n))
        th = rng.random(n) * 2 * np.pi
        return np.column_stack([r * np.cos(th), r * np.sin(th), np.zeros(n)])
    if isinstance(field, PlateUnionField):
        areas = []
        for p in field.plates:
            du = p.u_range[1] - p.u_range[0]
            dv = p.v_range[1] - p.v_range[0]
            areas.append(du * dv)
        areas = np.asarray(areas)
        pick = rng.choice(len(areas), size=n, p=areas / areas.sum())
        u = rng.random(n)
        v = rng.random(n)
        pts = np.empty((n, 3))
        for i, p in enumerate(field.plates):
            m = pick == i
            uu = p.u_range[0] + u[m] * (p.u_range[1] - p.u_range[0])
            vv = p.v_range[0] + v[m] * (p.v_range[1] - p.v_range[0])
            pts[m] = p.origin + uu[:, None] * p.e1 + vv[:, None] * p.e2
        return pts
    raise TypeError(f"no analytic surface sampler for {type(field).__name__}")


# ---------------------------------------------------------------------------
# Junction geometry checks
# ---------------------------------------------------------------------------

def junction_edges(mesh: LabeledMesh):
    """Edges with three or more incident faces, with their face lists."""
    edges, counts = edge_incidence_arrays(mesh)
    nm = edges[counts >= 3]
    if len(nm) == 0:
        return []
    fe = np.sort(np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                                 mesh.faces[:, [2, 0]]]), axis=1)
    face_ids = np.tile(np.arange(mesh.n_faces), 3)
    key = {tuple(e): [] for e in nm}
    for row, fid in zip(fe, face_ids):
        t = (int(row[0]), int(row[1]))
        if t in key:
            key[t].append(int(fid))
    return [((a, b), fl) for (a, b), fl in key.items()]


def min_junction_dihedral(mesh: LabeledMesh, min_wing: float = None,
                          region=None) -> float:
    """Minimum pairwise wedge angle (degrees) over non-manifold edges.

    For each junction edge, the incident faces' in-plane directions (from the
    edge toward the opposite vertex, projected perpendicular to the edge) are
    compared pairwise; small angles mean sheets folding onto each other.
    Wings shorter than ``min_wing`` (world units; default a quarter of the
    median junction-edge length) carry no sheet direction at the extraction
    resolution and are skipped: vertices optimized onto the junction line
    itself produce slivers whose nominal direction is numeric noise.
    ``region`` optionally restricts the measurement to edges whose midpoint
    satisfies the predicate, e.g. to exclude junction-line endpoints where
    sheets pinch out geometrically. Returns 180.0 when nothing qualifies.
    """
    junctions = junction_edges(mesh)
    if not junctions:
        return 180.0
    if min_wing is None:
        lens = [np.linalg.norm(mesh.vertices[b] - mesh.vertices[a])
                for (a, b), _ in junctions]
        min_wing = 0.25 * float(np.median(lens))
    worst = 180.0
    for (a, b), face_list in junctions:
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        if region is not None and not region(0.5 * (pa + pb)):
            continue
        t = pb - pa
        elen = np.linalg.norm(t)
        if elen < 1e-14:
            continue
        t = t / elen
        wings = []
        for fid in face_list:
            tri = mesh.faces[fid]
            opp = [v for v in tri if v != a and v != b]
            if len(opp) != 1:
                continue
            w = mesh.vertices[opp[0]] - pa
            w = w - (w @ t) * t
            nw = np.linalg.norm(w)
            if nw > min_wing:
                wings.append(w / nw)
        for i in range(len(wings)):
            for j in range(i + 1, len(wings)):
                ang = np.degrees(np.arccos(np.clip(wings[i] @ wings[j], -1, 1)))
                worst = min(worst, float(ang))
    return worst


def _segment_triangle_proper(p0, p1, tri, eps=1e-12):
    """Proper (interior) segment-triangle crossing test."""
    a, b, c = tri
    e1, e2 = b - a, c - a
    d = p1 - p0
    h = np.cross(d, e2)
    det = e1 @ h
    if abs(det) < eps:
        return False
    inv = 1.0 / det
    s = p0 - a
    u = (s @ h) * inv
    if u <= eps or u >= 1 - eps:
        return False
    q = np.cross(s, e1)
    v = (d @ q) * inv
    if v <= eps or u + v >= 1 - eps:
        return False
    t = (e2 @ q) * inv
    return eps < t < 1 - eps


def junction_self_intersections(mesh: LabeledMesh) -> int:
    """Count properly crossing face pairs in the junction neighborhood.

    Candidates are faces with a vertex near a non-manifold edge; pairs that
    share a vertex are skipped (faces around a common edge always touch, and
    their edges can only meet the partner's plane degenerately), so a hit
    means a sheet genuinely passing through another one, the folding failure
    the grouped Laplacian exists to prevent.
    """
    junctions = junction_edges(mesh)
    if not junctions:
        return 0
    v = mesh.vertices
    ends = np.array([[a, b] for (a, b), _ in junctions])
    jpts = np.vstack([v[ends[:, 0]], v[ends[:, 1]],
                      0.5 * (v[ends[:, 0]] + v[ends[:, 1]])])
    jlens = np.linalg.norm(v[ends[:, 1]] - v[ends[:, 0]], axis=1)
    reach = 2.0 * float(np.median(jlens))
    jtree = cKDTree(jpts)
    d, _ = jtree.query(v, k=1)
    near_vertex = d <= reach
    cand = np.flatnonzero(np.any(near_vertex[mesh.faces], axis=1))
    if len(cand) < 2:
        return 0
    centroids = v[mesh.faces[cand]].mean(axis=1)
    edge_len = np.max(np.linalg.norm(
        v[mesh.faces[cand][:, [1, 2, 0]]] - v[mesh.faces[cand]], axis=2))
    pair_idx = cKDTree(centroids).query_pairs(2.0 * edge_len,
                                              output_type="ndarray")
    hits = 0
    for i, j in pair_idx:
        f1 = mesh.faces[cand[i]]
        f2 = mesh.faces[cand[j]]
        if set(map(int, f1)) & set(map(int, f2)):
            continue
        tri1, tri2 = v[f1], v[f2]
        crossed = False
        for f_own, tri_other in ((f1, tri2), (f2, tri1)):
            for k in range(3):
                p0, p1 = v[f_own[k]], v[f_own[(k + 1) % 3]]
                if _segment_triangle_proper(p0, p1, tri_other):
                    crossed = True
        if crossed:
            hits += 1
    return hits
