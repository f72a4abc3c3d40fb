"""Material-interface partitioning and non-manifold meshing of unsigned
distance fields.

The pipeline derives a multi-labeled voxel partition from a UDF (two-signed
local field, component labeling, erosion plus graph-cut relabeling, envelope
driven merging), extracts the single-layer interface mesh between partitions
with a multi-label marching cubes, and refines vertices against the UDF with
per-group Laplacian regularization.
"""

__version__ = "0.1.0"

from .config import ConfigError, PipelineConfig
from .fields import (GridField, GridSpec, PointSetField, ScalarField,
                     finite_difference_gradient, gradient, make_fixture,
                     read_udfg, sample_grid, write_udfg)
from .labeling import (LabelField, alpha_expansion, connected_components,
                       erode, merge_partitions, split_remnants)
from .mesh import LabeledMesh, edge_incidence_map, read_obj, write_obj
from .metrics import (TopologyReport, area_weighted_sample, chamfer_l2,
                      topology_report)
from .pipeline import PipelineError, PipelineResult, gen_fixture, run_pipeline
from .refine import RefineConfig, group_submeshes, loss, refine
from .sampling import (OrientedPointCloud, estimate_normals, project_to_minimum,
                       sample_level_band, voxel_downsample)
from .signfield import SignField, envelope_mask, local_two_signed_field

__all__ = [
    "ConfigError", "GridField", "GridSpec", "LabelField", "LabeledMesh",
    "OrientedPointCloud", "PipelineConfig", "PipelineError", "PipelineResult",
    "PointSetField", "RefineConfig", "ScalarField", "SignField",
    "TopologyReport", "alpha_expansion", "area_weighted_sample", "chamfer_l2",
    "connected_components", "edge_incidence_map", "envelope_mask", "erode",
    "estimate_normals", "finite_difference_gradient", "gen_fixture",
    "gradient", "group_submeshes", "local_two_signed_field", "loss",
    "make_fixture", "merge_partitions", "project_to_minimum", "read_obj",
    "read_udfg", "refine", "run_pipeline", "sample_grid", "sample_level_band",
    "split_remnants", "topology_report", "voxel_downsample", "write_obj",
    "write_udfg",
]
