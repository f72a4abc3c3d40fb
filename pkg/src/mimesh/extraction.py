"""Multi-label cell meshing of a material interface, plus boundary trimming.

Dual cubes span 8 neighboring voxel centers. Within a cube, interface pieces
are built from three vertex kinds: edge vertices where corner labels differ
(positioned at the two-signed field's linear zero crossing when the endpoint
signs oppose, clamped away from the corners, else the midpoint), face-center
vertices on faces carrying 3+ labels or a two-label checkerboard, and a
cube-center vertex when the cube carries 3+ labels. Triangles are fanned so
each separates exactly two labels; faces touching the background label are
never emitted, which is what permits open models. Vertices are deduplicated
through canonical grid keys, so adjacent cubes agree exactly and the output
is crack-free and deterministic.
"""

from __future__ import annotations

import logging

import numpy as np

from .fields import ScalarField
from .labeling import LabelField
from .mesh import LabeledMesh, edge_incidence_arrays, edge_incidence_map  # noqa: F401
from .signfield import SignField

log = logging.getLogger(__name__)

# Corner offsets: bottom ring 0-3, top ring 4-7.
CORNERS = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
], dtype=np.int64)

# Faces as cyclic corner quadruples: (fixed axis, fixed offset, corners).
FACES = (
    (2, 0, (0, 1, 2, 3)),
    (2, 1, (4, 5, 6, 7)),
    (1, 0, (0, 1, 5, 4)),
    (1, 1, (3, 2, 6, 7)),
    (0, 0, (0, 3, 7, 4)),
    (0, 1, (1, 2, 6, 5)),
)

_EDGE_T_CLAMP = (0.1, 0.9)


class _VertexBank:
    """Canonical-key vertex store shared across cubes."""

    def __init__(self):
        self.index = {}
        self.coords = []

    def get(self, key, position):
        vid = self.index.get(key)
        if vid is None:
            vid = len(self.coords)
            self.index[key] = vid
            self.coords.append(position)
        return vid

    def array(self):
        if not self.coords:
            return np.empty((0, 3))
        return np.asarray(self.coords)


def _edge_axis(ca, cb):
    d = CORNERS[cb] - CORNERS[ca]
    return int(np.flatnonzero(d)[0])


def multi_label_mc(lf: LabelField, sf: SignField) -> LabeledMesh:
    """Extract the labeled interface mesh from a label grid + sign field."""
    if lf.spec.resolution != sf.spec.resolution or \
            not np.array_equal(lf.spec.bbox, sf.spec.bbox):
        raise ValueError("label field and sign field must share one grid spec")
    lab = lf.label
    w = sf.w
    wvalid = sf.inside_omega1 & sf.has_neighbors & (sf.w != 0)
    spec = lf.spec
    bmin = spec.bbox[0]
    vox = spec.voxel_size

    core = lab[:-1, :-1, :-1]
    active = np.zeros(core.shape, dtype=bool)
    for dx, dy, dz in CORNERS[1:]:
        nx, ny, nz = lab.shape
        active |= core != lab[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz]
    cubes = np.argwhere(active)
    if len(cubes) == 0:
        return LabeledMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64),
                           np.empty((0, 2), dtype=np.int64))

    lab8 = np.stack([lab[cubes[:, 0] + dx, cubes[:, 1] + dy, cubes[:, 2] + dz]
                     for dx, dy, dz in CORNERS], axis=1)
    w8 = np.stack([w[cubes[:, 0] + dx, cubes[:, 1] + dy, cubes[:, 2] + dz]
                   for dx, dy, dz in CORNERS], axis=1)
    valid8 = np.stack([wvalid[cubes[:, 0] + dx, cubes[:, 1] + dy, cubes[:, 2] + dz]
                       for dx, dy, dz in CORNERS], axis=1)

    bank = _VertexBank()
    faces_out = []
    labels_out = []

    def corner_center(base, c):
        idx = base + CORNERS[c]
        return bmin + (idx + 0.5) * vox

    def edge_vertex(base, ca, cb, row):
        ax = _edge_axis(ca, cb)
        lo, hi = (ca, cb) if CORNERS[ca][ax] < CORNERS[cb][ax] else (cb, ca)
        key_corner = tuple(base + CORNERS[lo])
        key = ("e", key_corner, ax)
        vid = bank.index.get(key)
        if vid is not None:
            return vid
        wl, wh = w8[row][lo], w8[row][hi]
        if valid8[row][lo] and valid8[row][hi] and (wl > 0) != (wh > 0):
            t = float(np.clip(wl / (wl - wh), *_EDGE_T_CLAMP))
        else:
            t = 0.5
        pos = corner_center(base, lo).astype(np.float64)
        pos[ax] += t * vox[ax]
        return bank.get(key, pos)

    def face_vertex(base, fixed_ax, corners4):
        # Canonical face key: min corner index of the 4 corners + fixed axis.
        mins = np.min(CORNERS[list(corners4)], axis=0) + base
        key = ("f", tuple(mins), fixed_ax)
        vid = bank.index.get(key)
        if vid is not None:
            return vid
        pos = (bmin + (mins + 0.5) * vox).copy()
        for ax in range(3):
            if ax != fixed_ax:
                pos[ax] += 0.5 * vox[ax]
        return bank.get(key, pos)

    def cube_vertex(base):
        key = ("c", tuple(base))
        vid = bank.index.get(key)
        if vid is not None:
            return vid
        pos = bmin + (np.asarray(base) + 1.0) * vox
        return bank.get(key, pos)

    for row in range(len(cubes)):
        labels = lab8[row]
        distinct = set(int(v) for v in labels)
        if len(distinct) < 2:
            continue
        nonbg = distinct - {0}
        if len(nonbg) < 2 and len(distinct) == 2:
            continue  # background-only interface: nothing to emit
        base = cubes[row]

        segments = []  # (v0, v1, (a, b))
        f_pairings = {}  # face vertex id -> pairing dict for loop tracing
        for fixed_ax, fixed_off, quad in FACES:
            cl = [int(labels[c]) for c in quad]
            face_distinct = set(cl)
            if len(face_distinct) < 2:
                continue
            sides = [(quad[i], quad[(i + 1) % 4]) for i in range(4)]
            side_has = [cl[i] != cl[(i + 1) % 4] for i in range(4)]
            checker = (len(face_distinct) == 2 and cl[0] == cl[2]
                       and cl[1] == cl[3])
            if len(face_distinct) == 2 and not checker:
                evs = [edge_vertex(base, *sides[i], row)
                       for i in range(4) if side_has[i]]
                a, b = sorted(face_distinct)
                segments.append((evs[0], evs[1], (a, b)))
            else:
                fv = face_vertex(base, fixed_ax, quad)
                per_side = {}
                for i in range(4):
                    if not side_has[i]:
                        continue
                    ev = edge_vertex(base, *sides[i], row)
                    pair = tuple(sorted((cl[i], cl[(i + 1) % 4])))
                    segments.append((ev, fv, pair))
                    per_side[i] = ev
                if checker:
                    # Sheets cross at the face vertex: pair opposite sides.
                    pairing = {}
                    for i in (0, 1):
                        if i in per_side and i + 2 in per_side:
                            pairing[per_side[i]] = per_side[i + 2]
                            pairing[per_side[i + 2]] = per_side[i]
                    f_pairings[fv] = pairing

        if not segments:
            continue

        if len(distinct) >= 3:
            cv = cube_vertex(base)
            for v0, v1, pair in segments:
                if pair[0] == 0:
                    continue
                faces_out.append((v0, v1, cv))
                labels_out.append(pair)
        else:
            a, b = sorted(distinct)
            if a == 0:
                continue
            for loop in _trace_loops(segments, f_pairings):
                # Fan from the smallest edge vertex: face vertices can be
                # shared by two loops, and fanning both from the same apex
                # would duplicate a diagonal.
                candidates = [v for v in loop if v not in f_pairings]
                apex = min(candidates) if candidates else min(loop)
                k = loop.index(apex)
                n = len(loop)
                prev_v, next_v = loop[k - 1], loop[(k + 1) % n]
                ordered = loop[k:] + loop[:k]
                if prev_v < next_v:
                    ordered = [ordered[0]] + ordered[:0:-1]
                for i in range(1, n - 1):
                    faces_out.append((ordered[0], ordered[i], ordered[i + 1]))
                    labels_out.append((a, b))

    mesh = LabeledMesh(bank.array(),
                       np.asarray(faces_out, dtype=np.int64).reshape(-1, 3),
                       np.asarray(labels_out, dtype=np.int64).reshape(-1, 2))
    mesh = _drop_degenerate(mesh)
    return mesh.compact()


def _trace_loops(segments, f_pairings):
    """Closed vertex loops from per-face segments of a two-label cube.

    Edge vertices have degree two; checkerboard face vertices have degree
    four and are traversed with the opposite-side pairing so the two sheets
    cross consistently.
    """
    incident = {}
    for si, (u, v, _) in enumerate(segments):
        incident.setdefault(u, []).append(si)
        incident.setdefault(v, []).append(si)
    used = [False] * len(segments)
    loops = []
    for start in range(len(segments)):
        if used[start]:
            continue
        u0, v0, _ = segments[start]
        loop = [u0]
        used[start] = True
        cur = v0
        while cur != u0:
            loop.append(cur)
            options = [s for s in incident[cur] if not used[s]]
            pairing = f_pairings.get(cur)
            nxt = None
            if pairing is not None:
                came_from = loop[-2]
                want = pairing.get(came_from)
                for s in options:
                    su, sv, _ = segments[s]
                    other = sv if su == cur else su
                    if other == want:
                        nxt = s
                        break
            if nxt is None:
                if not options:
                    break  # open chain: should not happen, guard anyway
                nxt = options[0]
            used[nxt] = True
            su, sv, _ = segments[nxt]
            cur = sv if su == cur else su
        for cycle in _simple_cycles(loop):
            loops.append(cycle)
    return loops


def _simple_cycles(walk):
    """Split a closed walk (repeats only at degree-4 face vertices) into
    simple cycles, so fanning never duplicates an edge."""
    cycles = []
    stack = []
    pos = {}
    for v in walk:
        if v in pos:
            k = pos[v]
            cycle = stack[k:]
            if len(cycle) >= 3:
                cycles.append(cycle)
            for u in stack[k + 1:]:
                pos.pop(u, None)
            stack = stack[:k + 1]
        else:
            pos[v] = len(stack)
            stack.append(v)
    if len(stack) >= 3:
        cycles.append(stack)
    return cycles


def _drop_degenerate(mesh: LabeledMesh, tol: float = 1e-12) -> LabeledMesh:
    if mesh.is_empty():
        return mesh
    keep = mesh.face_areas() > tol
    if keep.all():
        return mesh
    return LabeledMesh(mesh.vertices, mesh.faces[keep], mesh.face_labels[keep])


def trim_outside(mesh: LabeledMesh, field: ScalarField, r2: float):
    """Remove boundary extensions that left the inner envelope.

    Repeats two passes until a fixed point: drop faces whose vertices all
    have distance above ``r2``, then drop boundary flaps (faces with two or
    more boundary edges whose vertices all exceed ``r2/2``). Returns
    ``(trimmed mesh, flags)``; an entirely trimmed mesh is flagged, not an
    error.
    """
    if r2 <= 0:
        raise ValueError("r2 must be positive")
    flags = []
    if mesh.is_empty():
        return mesh, ["empty-input"]
    d = field.eval(mesh.vertices)
    faces = mesh.faces
    labels = mesh.face_labels
    changed = True
    while changed:
        changed = False
        if len(faces):
            far = np.all(d[faces] > r2, axis=1)
            if far.any():
                faces, labels = faces[~far], labels[~far]
                changed = True
        if len(faces):
            fe = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]],
                                         faces[:, [2, 0]]]), axis=1)
            _, inverse, counts = np.unique(fe, axis=0, return_inverse=True,
                                           return_counts=True)
            per_edge_boundary = counts[inverse] == 1
            n_boundary = per_edge_boundary.reshape(3, -1).sum(axis=0)
            flap = (n_boundary >= 2) & np.all(d[faces] > r2 / 2.0, axis=1)
            if flap.any():
                faces, labels = faces[~flap], labels[~flap]
                changed = True
    out = LabeledMesh(mesh.vertices, faces, labels).compact()
    if out.is_empty():
        flags.append("empty-after-trim")
        log.warning("trim removed every face (mesh entirely outside r2=%g)", r2)
    return out, flags
