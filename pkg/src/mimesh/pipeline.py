"""End-to-end orchestration: UDF in, labeled non-manifold mesh out.

Stages run in order (cloud sampling, sign field, labeling, extraction,
refinement, metrics); each stage is timed, any failure aborts with the stage
name and a machine-readable code, and the whole run is deterministic for a
given source, configuration, and seed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

from . import labeling as lb
from .config import PipelineConfig
from .extraction import multi_label_mc, trim_outside
from .fields import GridField, GridSpec, ScalarField, make_fixture, sample_grid, write_udfg
from .mesh import LabeledMesh
from .metrics import TopologyReport, topology_report
from .refine import RefineResult, refine
from .sampling import OrientedPointCloud, build_cloud
from .signfield import SignField, envelope_mask, local_two_signed_field

log = logging.getLogger(__name__)

CODE_CONFIG = "config-error"
CODE_EMPTY = "empty-result"
CODE_STAGE = "stage-failure"

STAGES = ("sampling", "signfield", "labeling", "extraction", "refine", "metrics")


class PipelineError(Exception):
    def __init__(self, stage: str, code: str, message: str):
        super().__init__(f"[{stage}] {code}: {message}")
        self.stage = stage
        self.code = code


@dataclass
class PipelineResult:
    mesh: LabeledMesh
    report: TopologyReport
    timings_ms: dict
    flags: list
    cloud: OrientedPointCloud = None
    sign_field: SignField = None
    label_field: lb.LabelField = None
    mesh_raw: LabeledMesh = None
    mesh_trimmed: LabeledMesh = None
    refine_result: RefineResult = None
    partition_count: int = 0


class _Timer:
    def __init__(self, timings, stage):
        self.timings = timings
        self.stage = stage

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.timings[self.stage] = (time.perf_counter() - self.t0) * 1000.0
        return False


def run_pipeline(field: ScalarField, cfg: PipelineConfig = None) -> PipelineResult:
    """Execute the full extraction pipeline on an evaluable UDF."""
    if cfg is None:
        cfg = PipelineConfig()
    cfg.validate()
    spec = cfg.grid_spec()
    timings: dict[str, float] = {}
    flags: list[str] = []

    with _Timer(timings, "sampling"):
        try:
            cloud = build_cloud(field, cfg.r1, cfg.sample_count, cfg.seed,
                                cfg.downsample_voxel, k=cfg.normal_k,
                                projection_steps=cfg.projection_steps)
        except (RuntimeError, ValueError) as e:
            raise PipelineError("sampling", CODE_STAGE, str(e)) from e
    log.info("sampling: %d oriented points", len(cloud))

    with _Timer(timings, "signfield"):
        omega1 = envelope_mask(field, spec, cfg.r1)
        omega2 = envelope_mask(field, spec, cfg.r2)
        if not omega1.any():
            raise PipelineError("signfield", CODE_EMPTY,
                                "envelope r1 contains no voxels")
        sf = local_two_signed_field(cloud, spec, omega1,
                                    radius=cfg.effective_signfield_radius(),
                                    eps=cfg.signfield_eps, omega2=omega2,
                                    workers=cfg.threads)
    log.info("signfield: %d envelope voxels", int(omega1.sum()))

    with _Timer(timings, "labeling"):
        components = lb.connected_components(sf)
        flagged = sf.inside_omega1 & ~sf.has_neighbors
        remnant, _ = lb.erode(components, cfg.erosion_iters, neutral=flagged)
        seed_label, allowed, lost = lb.split_remnants(components, remnant, flagged)
        if lost:
            flags.append(lb.FLAG_PARTITION_LOST)
            log.warning("%s: original partitions %s have no remnant",
                        lb.FLAG_PARTITION_LOST, lost)
        try:
            problem = lb.build_relabel_problem(components, seed_label, allowed,
                                               flagged)
        except lb.AllPartitionsLostError as e:
            raise PipelineError("labeling", CODE_EMPTY, str(e)) from e
        flags.extend(problem.flags)
        expanded = lb.alpha_expansion(problem, max_sweeps=cfg.max_sweeps)
        label_field = lb.merge_partitions(expanded, sf.inside_omega2,
                                          cfg.merge_ratio)
    partition_count = label_field.partition_count()
    log.info("labeling: %d partitions", partition_count)

    with _Timer(timings, "extraction"):
        mesh_raw = multi_label_mc(label_field, sf)
        mesh_trimmed, trim_flags = trim_outside(mesh_raw, field, cfg.r2)
        flags.extend(trim_flags)
        if mesh_trimmed.is_empty():
            raise PipelineError("extraction", CODE_EMPTY,
                                "mesh empty after trimming")
    log.info("extraction: %d vertices, %d faces",
             mesh_trimmed.n_vertices, mesh_trimmed.n_faces)

    refine_result = None
    with _Timer(timings, "refine"):
        if cfg.skip_refine:
            mesh = mesh_trimmed
        else:
            refine_result = refine(mesh_trimmed, field, cfg.refine)
            mesh = refine_result.mesh
            flags.extend(refine_result.flags)

    with _Timer(timings, "metrics"):
        report = topology_report(mesh)

    return PipelineResult(
        mesh=mesh, report=report, timings_ms=timings, flags=flags,
        cloud=cloud, sign_field=sf, label_field=label_field,
        mesh_raw=mesh_raw, mesh_trimmed=mesh_trimmed,
        refine_result=refine_result, partition_count=partition_count)


def gen_fixture(name: str, out_path, resolution: int = 64,
                bbox=None, **params) -> GridField:
    """Sample a named analytic fixture onto a grid and write it as UDFG."""
    field = make_fixture(name, **params) if bbox is None else \
        make_fixture(name, bbox=bbox, **params)
    spec = GridSpec(resolution, bbox if bbox is not None else field.bbox)
    grid = sample_grid(field, spec)
    write_udfg(out_path, grid)
    return grid
