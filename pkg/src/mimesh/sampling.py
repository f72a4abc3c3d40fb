"""Oriented point cloud generation on the near-zero set of a UDF.

Pipeline: rejection-sample a band around the surface, project samples toward
local distance minima, voxel-downsample to a uniform cloud, then estimate
normals by local PCA with spanning-tree orientation propagation. Orientation
is only piecewise consistent; flipped components are tolerated downstream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree

from .fields import ScalarField, _as_points

log = logging.getLogger(__name__)


@dataclass
class OrientedPointCloud:
    points: np.ndarray   # (n, 3)
    normals: np.ndarray  # (n, 3), unit length

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.points) != len(self.normals):
            raise ValueError("points/normals length mismatch")

    def __len__(self):
        return len(self.points)


def sample_level_band(field: ScalarField, r1: float, n: int, seed: int,
                      max_rounds: int = 200) -> np.ndarray:
    """Draw ``n`` points with ``eval(p) <= r1`` by seeded rejection sampling.

    Proposals are uniform in the field bbox. Fails if the band accepts
    nothing after ``max_rounds`` proposal rounds.
    """
    if r1 <= 0:
        raise ValueError("r1 must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = field.bbox[0], field.bbox[1]
    out = []
    got = 0
    batch = max(4 * n, 1 << 14)
    for round_ in range(max_rounds):
        cand = rng.uniform(lo, hi, size=(batch, 3))
        keep = cand[field.eval(cand) <= r1]
        if len(keep):
            out.append(keep)
            got += len(keep)
        if got >= n:
            return np.concatenate(out)[:n]
        if round_ == 0 and got == 0:
            log.debug("band r1=%g rejected full first round (%d proposals)", r1, batch)
    raise RuntimeError(
        f"band sampling failed: {got}/{n} accepted after {max_rounds} rounds (r1={r1})")


def project_points(field: ScalarField, points, steps: int = 10):
    """Project points toward local distance minima via damped gradient steps.

    Iterates ``p <- p - damp * eval(p) * g_hat(p)``, only accepting moves that
    strictly decrease the distance; the damping factor shrinks by 0.9 on each
    rejected move. Returns ``(projected, skipped)`` where ``skipped`` marks
    points frozen at a zero-gradient (medial) start.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cur = np.array(points, dtype=np.float64).reshape(-1, 3)
    d = field.eval(cur)
    damp = np.ones(len(cur))
    skipped = np.zeros(len(cur), dtype=bool)
    for it in range(steps):
        g = field.gradient(cur)
        gn = np.linalg.norm(g, axis=1)
        dead = gn < 1e-12
        if it == 0:
            skipped = dead.copy()
        active = ~dead & (d > 0)
        if not np.any(active):
            break
        ghat = np.zeros_like(g)
        ghat[active] = g[active] / gn[active, None]
        cand = cur - (damp * d)[:, None] * ghat
        d_cand = field.eval(cand)
        better = active & (d_cand < d)
        cur[better] = cand[better]
        d[better] = d_cand[better]
        damp[active & ~better] *= 0.9
    return cur, skipped


def project_to_minimum(field: ScalarField, p, steps: int = 10):
    """Single-point form of :func:`project_points`; returns the best iterate."""
    pts, single = _as_points(p)
    proj, _ = project_points(field, pts, steps)
    return proj[0] if single else proj


def voxel_downsample(points, voxel: float) -> np.ndarray:
    """Collapse points to one centroid per occupied cubic cell of side ``voxel``."""
    if voxel <= 0:
        raise ValueError("voxel must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return pts.copy()
    cells = np.floor(pts / voxel).astype(np.int64)
    _, inverse, counts = np.unique(cells, axis=0, return_inverse=True,
                                   return_counts=True)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, pts)
    return sums / counts[:, None]


def estimate_normals(points, k: int = 30) -> OrientedPointCloud:
    """PCA normals with spanning-tree orientation propagation.

    Per point, the normal is the smallest-eigenvalue eigenvector of the k-NN
    covariance. Orientation propagates along a minimum spanning tree of the
    k-NN graph weighted by ``1 - |n_i . n_j|``, flipping children to agree with
    their parent; each connected component is rooted at its max-z point and
    gets an independent (arbitrary) global sign.
    """
    from scipy.spatial import cKDTree

    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if k < 3:
        raise ValueError("k must be >= 3")
    if n <= k:
        raise ValueError(f"need more than k={k} points, got {n}")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    nbr = idx[:, 1:]

    local = pts[nbr] - pts[nbr].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local)
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]

    # Rank-deficient neighborhoods (collinear): borrow the nearest healthy normal.
    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = evals[:, 1] <= 1e-10 * scale
    if np.any(degenerate):
        healthy = np.flatnonzero(~degenerate)
        if len(healthy) == 0:
            raise ValueError("all normal neighborhoods are degenerate")
        htree = cKDTree(pts[healthy])
        _, hidx = htree.query(pts[degenerate], k=1)
        normals[degenerate] = normals[healthy[hidx]]

    rows = np.repeat(np.arange(n), k)
    cols = nbr.ravel()
    dots = np.abs(np.einsum("ij,ij->i", normals[rows], normals[cols]))
    # Uniform offset keeps zero-weight (parallel) edges in the sparse graph.
    weights = 1.0 - np.minimum(dots, 1.0) + 1e-9
    graph = coo_matrix((weights, (rows, cols)), shape=(n, n)).tocsr()
    graph = graph.maximum(graph.T)  # symmetrize
    n_comp, comp = connected_components(graph, directed=False)

    mst = minimum_spanning_tree(graph)
    mst = mst + mst.T
    indptr, indices = mst.indptr, mst.indices

    visited = np.zeros(n, dtype=bool)
    for c in range(n_comp):
        members = np.flatnonzero(comp == c)
        root = members[np.argmax(pts[members, 2])]
        stack = [root]
        visited[root] = True
        while stack:
            u = stack.pop()
            for v in indices[indptr[u]:indptr[u + 1]]:
                if not visited[v]:
                    visited[v] = True
                    if normals[v] @ normals[u] < 0:
                        normals[v] = -normals[v]
                    stack.append(v)

    norms = np.linalg.norm(normals, axis=1)
    normals = normals / norms[:, None]
    return OrientedPointCloud(pts, normals)


def build_cloud(field: ScalarField, r1: float, n: int, seed: int,
                downsample_voxel: float, k: int = 30,
                projection_steps: int = 10) -> OrientedPointCloud:
    """Full cloud stage: band sample, project, downsample, orient."""
    raw = sample_level_band(field, r1, n, seed)
    projected, skipped = project_points(field, raw, projection_steps)
    if np.any(skipped):
        log.debug("projection skipped %d medial-start points", int(skipped.sum()))
    sparse = voxel_downsample(projected, downsample_voxel)
    return estimate_normals(sparse, k=k)


# ---------------------------------------------------------------------------
# Point cloud I/O: ASCII XYZ / XYZN, plus PLY reading for external clouds.
# ---------------------------------------------------------------------------

def write_xyz(path, points) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    with open(path, "w") as fh:
        for p in pts:
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


def write_xyzn(path, cloud: OrientedPointCloud) -> None:
    with open(path, "w") as fh:
        for p, nrm in zip(cloud.points, cloud.normals):
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} "
                     f"{nrm[0]:.9g} {nrm[1]:.9g} {nrm[2]:.9g}\n")


def read_xyz(path):
    """Read ASCII XYZ or XYZN; returns (points, normals-or-None)."""
    data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if data.shape[1] >= 6:
        return data[:, :3], data[:, 3:6]
    if data.shape[1] >= 3:
        return data[:, :3], None
    raise ValueError(f"expected >=3 columns in {path}, got {data.shape[1]}")


_PLY_TYPES = {
    "float": ("f4", 4), "float32": ("f4", 4), "double": ("f8", 8),
    "float64": ("f8", 8), "uchar": ("u1", 1), "uint8": ("u1", 1),
    "char": ("i1", 1), "int8": ("i1", 1), "short": ("i2", 2),
    "ushort": ("u2", 2), "int": ("i4", 4), "int32": ("i4", 4),
    "uint": ("u4", 4), "uint32": ("u4", 4),
}


def read_ply_points(path):
    """Read vertex positions (and normals when present) from a PLY file.

    Supports ascii and binary_little_endian, scalar vertex properties only.
    Returns (points, normals-or-None).
    """
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError(f"{path} is not a PLY file")
        fmt = None
        n_vertex = 0
        props = []       # (name, dtype) for the vertex element
        in_vertex = False
        while True:
            line = fh.readline()
            if not line:
                raise ValueError("unterminated PLY header")
            tok = line.decode("ascii", "replace").split()
            if not tok:
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                if tok[1] == "list":
                    raise ValueError("list properties unsupported on vertex element")
                props.append((tok[2], _PLY_TYPES[tok[1]][0]))
            elif tok[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise ValueError(f"unsupported PLY format {fmt}")
        names = [p[0] for p in props]
        if fmt == "ascii":
            rows = []
            for _ in range(n_vertex):
                rows.append([float(x) for x in fh.readline().split()[:len(props)]])
            table = np.asarray(rows, dtype=np.float64)
        else:
            dt = np.dtype([(nm, "<" + t) for nm, t in props])
            raw = fh.read(dt.itemsize * n_vertex)
            rec = np.frombuffer(raw, dtype=dt, count=n_vertex)
            table = np.column_stack([rec[nm].astype(np.float64) for nm in names])
    cols = {nm: table[:, i] for i, nm in enumerate(names)}
    pts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    if all(nm in cols for nm in ("nx", "ny", "nz")):
        return pts, np.column_stack([cols["nx"], cols["ny"], cols["nz"]])
    return pts, None
