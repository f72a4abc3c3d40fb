"""Labeled triangle mesh container, edge incidence, and OBJ/PLY I/O.

Faces carry the unordered pair of partition labels they separate, which is
what lets a single vertex/face soup represent non-manifold junctions (an
edge may have three or more incident faces). Vertices are shared, never
duplicated, across faces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNLABELED = -1


@dataclass
class LabeledMesh:
    vertices: np.ndarray     # (v, 3) float64
    faces: np.ndarray        # (f, 3) int64 vertex indices
    face_labels: np.ndarray  # (f, 2) int64, sorted label pairs; -1 if unknown

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.face_labels = np.asarray(self.face_labels, dtype=np.int64).reshape(-1, 2)
        if len(self.faces) != len(self.face_labels):
            raise ValueError("faces/face_labels length mismatch")
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def label_pairs(self):
        if len(self.face_labels) == 0:
            return []
        return [tuple(p) for p in np.unique(self.face_labels, axis=0)]

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        a, b, c = (v[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def compact(self) -> "LabeledMesh":
        """Drop unreferenced vertices, remapping face indices."""
        if len(self.faces) == 0:
            return LabeledMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64),
                               np.empty((0, 2), dtype=np.int64))
        used = np.unique(self.faces)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return LabeledMesh(self.vertices[used], remap[self.faces],
                           self.face_labels.copy())


def mesh_edges(mesh: LabeledMesh) -> np.ndarray:
    """All face edges as sorted vertex pairs, one row per (face, edge)."""
    f = mesh.faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    return np.sort(e, axis=1)


def edge_incidence_map(mesh: LabeledMesh) -> dict:
    """Map undirected edge (i, j) with i < j to its incident face count."""
    if mesh.is_empty():
        return {}
    edges = mesh_edges(mesh)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return {(int(a), int(b)): int(c) for (a, b), c in zip(uniq, counts)}


def edge_incidence_arrays(mesh: LabeledMesh):
    """(unique_edges (e,2), counts (e,)) form of the incidence map."""
    if mesh.is_empty():
        return np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=np.int64)
    edges = mesh_edges(mesh)
    return np.unique(edges, axis=0, return_counts=True)


# ---------------------------------------------------------------------------
# OBJ: one group per label pair, named mat_<a>_<b>.
# ---------------------------------------------------------------------------

def write_obj(path, mesh: LabeledMesh) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    order = np.lexsort((mesh.face_labels[:, 1], mesh.face_labels[:, 0])) \
        if len(mesh.faces) else np.empty(0, dtype=np.int64)
    current = None
    for fi in order:
        pair = (int(mesh.face_labels[fi, 0]), int(mesh.face_labels[fi, 1]))
        if pair != current:
            lines.append(f"g mat_{pair[0]}_{pair[1]}")
            current = pair
        f = mesh.faces[fi]
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path) -> LabeledMesh:
    vertices, faces, labels = [], [], []
    current = (UNLABELED, UNLABELED)
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                vertices.append([float(x) for x in tok[1:4]])
            elif tok[0] == "g" and len(tok) > 1 and tok[1].startswith("mat_"):
                parts = tok[1].split("_")
                try:
                    current = (int(parts[1]), int(parts[2]))
                except (IndexError, ValueError):
                    current = (UNLABELED, UNLABELED)
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) - 1 for t in tok[1:]]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
                    labels.append(current)
    return LabeledMesh(
        np.asarray(vertices, dtype=np.float64).reshape(-1, 3),
        np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        np.asarray(labels, dtype=np.int64).reshape(-1, 2))


# ---------------------------------------------------------------------------
# Binary PLY with per-face label_a/label_b integer properties.
# ---------------------------------------------------------------------------

def write_ply(path, mesh: LabeledMesh) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property float64 x\nproperty float64 y\nproperty float64 z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int32 vertex_indices\n"
        "property int32 label_a\nproperty int32 label_b\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f8").tobytes())
        face_dt = np.dtype([("n", "u1"), ("i", "<i4", 3),
                            ("a", "<i4"), ("b", "<i4")])
        rec = np.empty(mesh.n_faces, dtype=face_dt)
        rec["n"] = 3
        rec["i"] = mesh.faces.astype("<i4")
        rec["a"] = mesh.face_labels[:, 0].astype("<i4")
        rec["b"] = mesh.face_labels[:, 1].astype("<i4")
        fh.write(rec.tobytes())


def read_ply_mesh(path) -> LabeledMesh:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError("not a PLY file")
        n_vertex = n_face = 0
        while True:
            line = fh.readline().decode("ascii").split()
            if not line:
                continue
            if line[0] == "format" and line[1] != "binary_little_endian":
                raise ValueError("only binary_little_endian PLY meshes supported")
            if line[0] == "element":
                if line[1] == "vertex":
                    n_vertex = int(line[2])
                elif line[1] == "face":
                    n_face = int(line[2])
            if line[0] == "end_header":
                break
        verts = np.frombuffer(fh.read(24 * n_vertex), dtype="<f8").reshape(-1, 3)
        face_dt = np.dtype([("n", "u1"), ("i", "<i4", 3),
                            ("a", "<i4"), ("b", "<i4")])
        rec = np.frombuffer(fh.read(face_dt.itemsize * n_face), dtype=face_dt)
        if np.any(rec["n"] != 3):
            raise ValueError("non-triangular PLY face")
    labels = np.column_stack([rec["a"], rec["b"]]).astype(np.int64)
    return LabeledMesh(verts.astype(np.float64), rec["i"].astype(np.int64), labels)
