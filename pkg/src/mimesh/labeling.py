"""From the two-signed field to a global multi-labeled field.

Stages: connected-component labeling of the sign classes, morphological
erosion to cut thin "tubes" that leak across junctions, re-labeling of the
eroded voxels by Potts-energy minimization with expansion moves (hard seed
constraints on the erosion survivors), and a final merge of over-segmented
partitions driven by where their shared boundary sits relative to the inner
envelope.

6-connectivity is used throughout so label interfaces align with the cube
faces consumed by the extraction stage.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from .fields import GridSpec
from .signfield import SignField

log = logging.getLogger(__name__)

LBLF_MAGIC = b"LBLF"
LBLF_VERSION = 1

SIX_CONN = ndimage.generate_binary_structure(3, 1)

FLAG_PARTITION_LOST = "partition lost to erosion"
FLAG_UNSEEDED_REGION = "free region without adjacent seed"


class AllPartitionsLostError(RuntimeError):
    """Erosion removed every seed voxel; no labeling can be recovered."""


@dataclass
class LabelField:
    """Per-voxel partition ids; 0 is the background outside the envelope."""

    spec: GridSpec
    label: np.ndarray  # int32 grid

    def __post_init__(self):
        self.label = np.ascontiguousarray(self.label, dtype=np.int32)
        if self.label.shape != self.spec.resolution:
            raise ValueError("label grid shape mismatch")

    def partition_count(self) -> int:
        return int(len(np.unique(self.label[self.label > 0])))


def _first_occurrence_relabel(label: np.ndarray) -> np.ndarray:
    """Renumber positive labels 1..n by first occurrence in x-fastest order."""
    flat = label.ravel(order="F")
    uniq, first = np.unique(flat, return_index=True)
    keep = uniq > 0
    uniq, first = uniq[keep], first[keep]
    order = np.argsort(first, kind="stable")
    lut = np.zeros(int(label.max()) + 1, dtype=np.int32)
    lut[uniq[order]] = np.arange(1, len(uniq) + 1, dtype=np.int32)
    return lut[label]


def connected_components(sf: SignField) -> LabelField:
    """Group envelope voxels by sign of w under 6-connectivity.

    Three sign classes: positive, negative, and undefined/zero (empty
    neighborhoods keep their own class). Labels are numbered in deterministic
    scan order; voxels outside the envelope get 0.
    """
    pos = sf.inside_omega1 & sf.has_neighbors & (sf.w > 0)
    neg = sf.inside_omega1 & sf.has_neighbors & (sf.w < 0)
    zero = sf.inside_omega1 & ~(pos | neg)
    label = np.zeros(sf.spec.resolution, dtype=np.int32)
    offset = 0
    for mask in (pos, neg, zero):
        comp, n = ndimage.label(mask, structure=SIX_CONN)
        label[mask] = comp[mask] + offset
        offset += n
    return LabelField(sf.spec, _first_occurrence_relabel(label))


_NEUTRAL = -1


def _differs_from_neighbor(grid: np.ndarray) -> np.ndarray:
    """True where any 6-neighbor (or the outside of the grid) differs.

    Neutral voxels (sentinel -1) never induce a difference.
    """
    differs = np.zeros(grid.shape, dtype=bool)
    for ax in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        a, b = grid[tuple(lo)], grid[tuple(hi)]
        d = a != b
        differs[tuple(lo)] |= d & (b != _NEUTRAL)
        differs[tuple(hi)] |= d & (a != _NEUTRAL)
        edge_lo = [slice(None)] * 3
        edge_lo[ax] = 0
        edge_hi = [slice(None)] * 3
        edge_hi[ax] = grid.shape[ax] - 1
        differs[tuple(edge_lo)] |= grid[tuple(edge_lo)] != 0
        differs[tuple(edge_hi)] |= grid[tuple(edge_hi)] != 0
    return differs


def erode(lf: LabelField, iterations: int = 2, neutral: np.ndarray = None):
    """Peel `iterations` boundary layers off every partition.

    A layer is peeled wherever a voxel touches a differently-labeled voxel or
    background (peeled voxels count as background for subsequent rounds).
    ``neutral`` voxels (sign-undefined regions) neither peel nor induce
    peeling; they are always re-labeled downstream, and treating them as
    boundaries would peel the sign-defined bands from both sides and destroy
    every seed. Returns ``(remnant, eroded)``: surviving labels per voxel
    (0 where eroded, background, or neutral) and the mask of eroded voxels.
    A partition may erode away entirely.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    work = lf.label.copy()
    if neutral is not None:
        work[neutral] = _NEUTRAL
    for _ in range(iterations):
        peel = _differs_from_neighbor(work) & (work > 0)
        if not peel.any():
            break
        work[peel] = 0
    remnant = np.where(work > 0, work, 0).astype(np.int32)
    eroded = (lf.label > 0) & (remnant == 0)
    if neutral is not None:
        eroded &= ~neutral
    return remnant, eroded


def split_remnants(lf: LabelField, remnant: np.ndarray, flagged: np.ndarray = None):
    """Assign fresh labels to each connected component of every remnant.

    ``flagged`` voxels (undefined sign) are evicted from the remnants first;
    they are always re-labeled by the optimization. Returns ``(seed_label,
    allowed, lost)``: the fresh per-voxel seed grid, the map original
    partition -> tuple of its fresh labels, and the original labels whose
    remnant came out empty.
    """
    rem = remnant.copy()
    if flagged is not None:
        rem[flagged] = 0
    seed_label = np.zeros(lf.spec.resolution, dtype=np.int32)
    allowed: dict[int, tuple[int, ...]] = {}
    lost: list[int] = []
    next_label = 1
    for k in np.unique(lf.label[lf.label > 0]):
        mask = rem == k
        comp, n = ndimage.label(mask, structure=SIX_CONN)
        if n == 0:
            allowed[int(k)] = ()
            # Sign-undefined partitions are expected to vanish; only a real
            # sign partition with no surviving seed is a loss.
            part = lf.label == k
            if flagged is None or bool((part & ~flagged).any()):
                lost.append(int(k))
            continue
        seed_label[mask] = comp[mask] + (next_label - 1)
        allowed[int(k)] = tuple(range(next_label, next_label + n))
        next_label += n
    return seed_label, allowed, lost


@dataclass
class RelabelProblem:
    """Potts relabeling instance over the envelope voxels.

    Free voxels (eroded or sign-undefined) are optimized; seed voxels carry
    hard labels. ``allowed`` maps each original partition to the fresh labels
    of its remnant components (possibly empty, in which case the data term
    vanishes for voxels of that partition).
    """

    spec: GridSpec
    free_flat: np.ndarray        # flat (C-order) indices of free voxels
    seed_label: np.ndarray       # int32 grid, 0 where not a seed
    origin: np.ndarray           # original partition id per free voxel
    allowed: dict[int, tuple[int, ...]]
    ff_pairs: np.ndarray         # (p, 2) indices into free_flat
    fs_pairs: np.ndarray         # (q, 2): free index, seed label
    ss_mismatch: int             # constant: adjacent seed pairs with differing labels
    init_label: np.ndarray       # per-free-voxel initial labels (nearest seed)
    flags: list[str]

    @property
    def labels(self) -> np.ndarray:
        return np.unique(self.seed_label[self.seed_label > 0])


def build_relabel_problem(lf: LabelField, seed_label: np.ndarray,
                          allowed: dict[int, tuple[int, ...]],
                          flagged: np.ndarray = None) -> RelabelProblem:
    """Assemble the adjacency structure and initial labels for relabeling."""
    domain = lf.label > 0
    seed = seed_label > 0
    if flagged is not None:
        seed = seed & ~flagged
    free_mask = domain & ~seed
    if not seed.any():
        raise AllPartitionsLostError("erosion removed every seed voxel")

    shape = lf.spec.resolution
    flat_index = np.arange(int(np.prod(shape)), dtype=np.int64).reshape(shape)
    free_flat = flat_index[free_mask]
    free_pos = np.full(int(np.prod(shape)), -1, dtype=np.int64)
    free_pos[free_flat] = np.arange(len(free_flat))

    ff, fs, ss = [], [], 0
    for ax in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        a_dom = domain[tuple(lo)] & domain[tuple(hi)]
        a_flat = flat_index[tuple(lo)][a_dom]
        b_flat = flat_index[tuple(hi)][a_dom]
        a_free = free_pos[a_flat] >= 0
        b_free = free_pos[b_flat] >= 0
        both = a_free & b_free
        ff.append(np.column_stack([free_pos[a_flat[both]], free_pos[b_flat[both]]]))
        only_a = a_free & ~b_free
        fs.append(np.column_stack([free_pos[a_flat[only_a]],
                                   seed_label.ravel()[b_flat[only_a]]]))
        only_b = b_free & ~a_free
        fs.append(np.column_stack([free_pos[b_flat[only_b]],
                                   seed_label.ravel()[a_flat[only_b]]]))
        neither = ~a_free & ~b_free
        ss += int(np.sum(seed_label.ravel()[a_flat[neither]]
                         != seed_label.ravel()[b_flat[neither]]))
    ff_pairs = np.concatenate(ff) if ff else np.empty((0, 2), dtype=np.int64)
    fs_pairs = np.concatenate(fs) if fs else np.empty((0, 2), dtype=np.int64)

    # Nearest-seed initialization (taxicab == BFS distance on the 6-grid).
    dt_input = (~seed).astype(np.uint8)
    nearest = ndimage.distance_transform_cdt(dt_input, metric="taxicab",
                                             return_indices=True,
                                             return_distances=False)
    init_grid = seed_label[tuple(nearest)]
    init_label = init_grid.ravel()[free_flat].astype(np.int32)

    flags: list[str] = []
    comp, n_comp = ndimage.label(free_mask, structure=SIX_CONN)
    if n_comp:
        comp_free = comp.ravel()[free_flat]
        seeded = np.zeros(n_comp + 1, dtype=bool)
        if len(fs_pairs):
            seeded[comp_free[fs_pairs[:, 0]]] = True
        origin_grid = lf.label.ravel()[free_flat]
        for c in range(1, n_comp + 1):
            members = comp_free == c
            if not seeded[c] and members.any():
                origins = np.unique(origin_grid[members])
                if all(len(allowed.get(int(o), ())) == 0 for o in origins):
                    flags.append(FLAG_UNSEEDED_REGION)
                    log.debug("free component %d (%d voxels) has no adjacent seed; "
                              "assigned nearest-seed labels", c, int(members.sum()))

    return RelabelProblem(
        spec=lf.spec,
        free_flat=free_flat,
        seed_label=seed_label,
        origin=lf.label.ravel()[free_flat].astype(np.int32),
        allowed=allowed,
        ff_pairs=ff_pairs,
        fs_pairs=fs_pairs,
        ss_mismatch=ss,
        init_label=init_label,
        flags=flags,
    )


class _PottsEnergy:
    """Exact energy evaluation for a relabel problem, labels as compact indices."""

    def __init__(self, problem: RelabelProblem):
        self.problem = problem
        self.universe = problem.labels.astype(np.int32)
        if len(self.universe) == 0:
            raise AllPartitionsLostError("empty label universe")
        self.label_index = {int(l): i for i, l in enumerate(self.universe)}
        origins = np.unique(problem.origin)
        origin_index = {int(o): i for i, o in enumerate(origins)}
        self.origin_compact = np.array([origin_index[int(o)] for o in problem.origin],
                                       dtype=np.int64)
        n_l = len(self.universe)
        self.d_cost = np.zeros((len(origins), n_l), dtype=np.int64)
        for o, oi in origin_index.items():
            fk = problem.allowed.get(o, ())
            if len(fk) == 0:
                continue  # empty F_k: data term vanishes
            row = np.ones(n_l, dtype=np.int64)
            for l in fk:
                if int(l) in self.label_index:
                    row[self.label_index[int(l)]] = 0
            self.d_cost[oi] = row
        self.fs_free = problem.fs_pairs[:, 0]
        self.fs_label = np.array(
            [self.label_index[int(l)] for l in problem.fs_pairs[:, 1]],
            dtype=np.int64) if len(problem.fs_pairs) else np.empty(0, dtype=np.int64)

    def compact_init(self) -> np.ndarray:
        return np.array([self.label_index[int(l)] for l in self.problem.init_label],
                        dtype=np.int64)

    def energy(self, lab: np.ndarray) -> int:
        p = self.problem
        e = int(self.d_cost[self.origin_compact, lab].sum())
        if len(p.ff_pairs):
            e += int(np.sum(lab[p.ff_pairs[:, 0]] != lab[p.ff_pairs[:, 1]]))
        if len(self.fs_free):
            e += int(np.sum(lab[self.fs_free] != self.fs_label))
        return e + p.ss_mismatch


def _expansion_move(energy: _PottsEnergy, lab: np.ndarray, alpha: int) -> np.ndarray:
    """Optimal binary "expand alpha" move via min-cut; returns new labels."""
    p = energy.problem
    movable = np.flatnonzero(lab != alpha)
    if len(movable) == 0:
        return lab
    node_of = np.full(len(lab), -1, dtype=np.int64)
    node_of[movable] = np.arange(len(movable))
    m = len(movable)
    source, sink = m, m + 1

    # t-link costs: keep (source side, pays i->t) vs switch to alpha (sink
    # side, pays s->i). Data terms first.
    keep = energy.d_cost[energy.origin_compact[movable], lab[movable]].copy()
    switch = energy.d_cost[energy.origin_compact[movable], alpha].copy()

    rows, cols, caps = [], [], []

    if len(energy.fs_free):
        nf = node_of[energy.fs_free]
        in_graph = nf >= 0
        np.add.at(keep, nf[in_graph],
                  (lab[energy.fs_free[in_graph]] != energy.fs_label[in_graph]).astype(np.int64))
        np.add.at(switch, nf[in_graph],
                  (energy.fs_label[in_graph] != alpha).astype(np.int64))

    if len(p.ff_pairs):
        fa, fb = p.ff_pairs[:, 0], p.ff_pairs[:, 1]
        na, nb = node_of[fa], node_of[fb]
        both = (na >= 0) & (nb >= 0)
        if both.any():
            i, j = na[both], nb[both]
            a_cost = (lab[fa[both]] != lab[fb[both]]).astype(np.int64)  # E(keep,keep)
            # E = A + (C-A) x_i + (D-C) x_j + (B+C-A-D)(1-x_i) x_j with
            # B = C = 1, D = 0: switch_i += 1-A, keep_j += 1, edge i->j = 2-A.
            np.add.at(switch, i, 1 - a_cost)
            np.add.at(keep, j, 1)
            rows.append(i)
            cols.append(j)
            caps.append(2 - a_cost)
        # Pairs with exactly one endpoint already at alpha act as fixed-alpha
        # neighbors of the in-graph endpoint.
        for u, v in ((fa, fb), (fb, fa)):
            one = (node_of[u] >= 0) & (node_of[v] < 0)
            if one.any():
                np.add.at(keep, node_of[u[one]],
                          (lab[u[one]] != alpha).astype(np.int64))

    rows.append(np.full(m, source))
    cols.append(np.arange(m))
    caps.append(switch)
    rows.append(np.arange(m))
    cols.append(np.full(m, sink))
    caps.append(keep)

    cap = coo_matrix(
        (np.concatenate(caps),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(m + 2, m + 2)).tocsr().astype(np.int32)
    cap.sum_duplicates()
    cap.eliminate_zeros()

    result = maximum_flow(cap, source, sink)
    residual = cap - result.flow
    residual.data = (residual.data > 0).astype(np.int32)
    residual.eliminate_zeros()
    reach = breadth_first_order(residual, source, directed=True,
                                return_predecessors=False)
    source_side = np.zeros(m + 2, dtype=bool)
    source_side[reach] = True

    new_lab = lab.copy()
    new_lab[movable[~source_side[:m]]] = alpha
    return new_lab


def alpha_expansion(problem: RelabelProblem, max_sweeps: int = 10,
                    energy_trace: list = None) -> LabelField:
    """Minimize the Potts relabeling energy by expansion moves.

    Moves are accepted only when they strictly decrease the exact energy, so
    the energy sequence is non-increasing; terminates after a full sweep with
    no improvement or ``max_sweeps`` sweeps. Seed constraints hold exactly
    (seeds are never part of a move). ``energy_trace``, when given, receives
    the exact energy after every attempted move.
    """
    energy = _PottsEnergy(problem)
    lab = energy.compact_init()
    cur = energy.energy(lab)
    if energy_trace is not None:
        energy_trace.append(cur)
    n_labels = len(energy.universe)
    for sweep in range(max_sweeps):
        improved = False
        for alpha in range(n_labels):
            cand = _expansion_move(energy, lab, alpha)
            e = energy.energy(cand)
            if e < cur:
                lab = cand
                cur = e
                improved = True
            if energy_trace is not None:
                energy_trace.append(cur)
        log.debug("expansion sweep %d: energy %d", sweep, cur)
        if not improved:
            break

    out = problem.seed_label.copy()
    out.ravel()[problem.free_flat] = energy.universe[lab]
    return LabelField(problem.spec, out)


def expansion_energy(problem: RelabelProblem, lf: LabelField) -> int:
    """Exact relabeling energy of a full labeling (for tests/oracles)."""
    energy = _PottsEnergy(problem)
    lab_vals = lf.label.ravel()[problem.free_flat]
    lab = np.array([energy.label_index[int(v)] for v in lab_vals], dtype=np.int64)
    return energy.energy(lab)


# ---------------------------------------------------------------------------
# Partition merging against the inner envelope
# ---------------------------------------------------------------------------

def _pair_counts(label: np.ndarray, omega2: np.ndarray):
    """Raw adjacency counts per unordered label pair, split by omega2 side."""
    pairs_in: dict[tuple[int, int], int] = {}
    pairs_out: dict[tuple[int, int], int] = {}
    for ax in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        a = label[tuple(lo)].ravel()
        b = label[tuple(hi)].ravel()
        inside = (omega2[tuple(lo)] & omega2[tuple(hi)]).ravel()
        sel = (a > 0) & (b > 0) & (a != b)
        if not sel.any():
            continue
        pa, pb = a[sel], b[sel]
        swap = pa > pb
        pa2 = np.where(swap, pb, pa).astype(np.int64)
        pb2 = np.where(swap, pa, pb).astype(np.int64)
        key = pa2 * (int(label.max()) + 1) + pb2
        for store, mask in ((pairs_in, inside[sel]), (pairs_out, ~inside[sel])):
            if mask.any():
                uk, cnt = np.unique(key[mask], return_counts=True)
                for k, c in zip(uk, cnt):
                    pair = (int(k) // (int(label.max()) + 1),
                            int(k) % (int(label.max()) + 1))
                    store[pair] = store.get(pair, 0) + int(c)
    return pairs_in, pairs_out


class _UnionFind:
    def __init__(self, items):
        self.parent = {int(i): int(i) for i in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def merge_partitions(lf: LabelField, omega2: np.ndarray,
                     ratio: float = 3.0) -> LabelField:
    """Merge adjacent partitions whose shared boundary avoids the inner envelope.

    For each adjacent label pair, boundary adjacencies are counted as inside
    (both voxels in omega2) or outside; pairs with ``outside > ratio * inside``
    merge greedily in descending outside/inside order, recomputing counts
    against merged classes. Terminates at the fixed point where no remaining
    pair satisfies the rule. Labels are renumbered compactly.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    labels = np.unique(lf.label[lf.label > 0])
    if len(labels) <= 1:
        return LabelField(lf.spec, lf.label.copy())
    raw_in, raw_out = _pair_counts(lf.label, omega2)
    uf = _UnionFind(labels)
    while True:
        class_in: dict[tuple[int, int], int] = {}
        class_out: dict[tuple[int, int], int] = {}
        for store, raw in ((class_in, raw_in), (class_out, raw_out)):
            for (a, b), c in raw.items():
                ra, rb = uf.find(a), uf.find(b)
                if ra == rb:
                    continue
                key = (min(ra, rb), max(ra, rb))
                store[key] = store.get(key, 0) + c
        best = None
        for key, n_out in class_out.items():
            n_in = class_in.get(key, 0)
            if n_out > ratio * n_in:
                score = n_out / max(n_in, 1)
                if best is None or score > best[0] or (score == best[0] and key < best[1]):
                    best = (score, key)
        if best is None:
            break
        uf.union(*best[1])
        log.debug("merged partitions %s (score %.2f)", best[1], best[0])

    roots = {int(l): uf.find(int(l)) for l in labels}
    uniq_roots = sorted(set(roots.values()))
    compact = {r: i + 1 for i, r in enumerate(uniq_roots)}
    lut = np.zeros(int(lf.label.max()) + 1, dtype=np.int32)
    for l in labels:
        lut[l] = compact[roots[int(l)]]
    return LabelField(lf.spec, lut[lf.label])


# ---------------------------------------------------------------------------
# LBLF dump: UDFG-style header with u32 labels, x-fastest.
# ---------------------------------------------------------------------------

def write_lblf(path, lf: LabelField) -> None:
    spec = lf.spec
    with open(path, "wb") as fh:
        fh.write(LBLF_MAGIC)
        fh.write(struct.pack("<I", LBLF_VERSION))
        fh.write(struct.pack("<3I", *spec.resolution))
        fh.write(struct.pack("<6d", *spec.bbox[0], *spec.bbox[1]))
        fh.write(lf.label.astype("<u4").ravel(order="F").tobytes())


def read_lblf(path) -> LabelField:
    with open(path, "rb") as fh:
        if fh.read(4) != LBLF_MAGIC:
            raise ValueError("not a LBLF file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != LBLF_VERSION:
            raise ValueError(f"unsupported LBLF version {version}")
        dims = struct.unpack("<3I", fh.read(12))
        bb = struct.unpack("<6d", fh.read(48))
        n = dims[0] * dims[1] * dims[2]
        lab = np.frombuffer(fh.read(4 * n), dtype="<u4").astype(np.int32)
    spec = GridSpec(dims, np.asarray(bb).reshape(2, 3))
    return LabelField(spec, lab.reshape(dims, order="F"))
