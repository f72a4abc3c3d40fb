"""Command-line entry points.

Subcommands: ``extract`` (UDF source to labeled mesh), ``eval`` (Chamfer +
topology report between a mesh and a reference), ``gen-fixture`` (write an
analytic fixture as a UDFG grid). Exit codes: 0 ok, 2 config error, 3 stage
failure, 4 empty result.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from . import __version__
from .config import ConfigError, PipelineConfig
from .fields import FIXTURE_NAMES, PointSetField, make_fixture, read_udfg
from .labeling import write_lblf
from .mesh import read_obj, read_ply_mesh, write_obj, write_ply
from .metrics import analytic_surface_samples, area_weighted_sample, chamfer_l2, \
    topology_report
from .pipeline import CODE_EMPTY, PipelineError, gen_fixture, run_pipeline
from .refine import RefineConfig
from .sampling import read_ply_points, read_xyz
from .signfield import write_sgnf

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_EMPTY = 4


def _load_field(source: str):
    if source.startswith("fixture:"):
        return make_fixture(source.split(":", 1)[1])
    low = source.lower()
    if low.endswith(".udfg"):
        return read_udfg(source)
    if low.endswith((".xyz", ".xyzn")):
        points, _ = read_xyz(source)
        return PointSetField(points)
    if low.endswith(".ply"):
        points, _ = read_ply_points(source)
        return PointSetField(points)
    raise ConfigError(f"unrecognized input source {source!r} "
                      "(expected fixture:NAME, .udfg, .xyz/.xyzn, or .ply)")


def _load_mesh(path: str):
    low = path.lower()
    if low.endswith(".obj"):
        return read_obj(path)
    if low.endswith(".ply"):
        return read_ply_mesh(path)
    raise ConfigError(f"unrecognized mesh format {path!r}")


def _write_mesh(path: str, mesh) -> None:
    if path.lower().endswith(".ply"):
        write_ply(path, mesh)
    else:
        write_obj(path, mesh)


def cmd_extract(args) -> int:
    cfg = PipelineConfig(
        resolution=args.resolution,
        r1=args.r1,
        r2=args.r2,
        sample_count=args.samples,
        downsample_voxel=args.downsample_voxel,
        erosion_iters=args.erosion_iters,
        merge_ratio=args.merge_ratio,
        seed=args.seed,
        threads=args.threads,
        refine=RefineConfig(lambda1=args.lambda1, iterations=args.refine_iters,
                            step=args.refine_step),
        skip_refine=args.no_refine,
    )
    field = _load_field(args.input)
    result = run_pipeline(field, cfg)
    _write_mesh(args.output, result.mesh)
    if args.dump_labels:
        write_lblf(args.dump_labels, result.label_field)
    if args.dump_signfield:
        write_sgnf(args.dump_signfield, result.sign_field)
    log.info("wrote %s (%d vertices, %d faces, %d partitions)", args.output,
             result.mesh.n_vertices, result.mesh.n_faces, result.partition_count)
    for flag in result.flags:
        log.warning("flag: %s", flag)
    return EXIT_OK


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    mesh = _load_mesh(args.mesh)
    samples = area_weighted_sample(mesh, args.samples, args.seed)
    if args.ref.startswith("fixture:"):
        ref_pts = analytic_surface_samples(make_fixture(args.ref.split(":", 1)[1]),
                                           args.samples, args.seed + 1)
    else:
        ref_pts = area_weighted_sample(_load_mesh(args.ref), args.samples,
                                       args.seed + 1)
    cd = chamfer_l2(samples, ref_pts, workers=args.threads)
    report = topology_report(mesh)
    payload = {
        "chamfer": cd,
        "topology_report": report.as_dict(),
        "runtime_ms": (time.perf_counter() - t0) * 1000.0,
    }
    with open(args.report, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    if args.csv:
        row = [args.mesh, f"{cd:.6f}"] + \
            [str(v) for v in report.as_dict().values()]
        with open(args.csv, "a") as fh:
            fh.write(",".join(row) + "\n")
    print(json.dumps(payload))
    return EXIT_OK


def cmd_gen_fixture(args) -> int:
    gen_fixture(args.name, args.out, resolution=args.resolution)
    log.info("wrote %s", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mimesh",
                                description="Material-interface meshing of "
                                            "unsigned distance fields")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract", help="run the extraction pipeline")
    ex.add_argument("--input", required=True,
                    help="fixture:NAME, grid .udfg, or point cloud .xyz/.xyzn/.ply")
    ex.add_argument("--output", required=True, help="output mesh (.obj or .ply)")
    ex.add_argument("--resolution", type=int, default=256)
    ex.add_argument("--r1", type=float, default=0.05)
    ex.add_argument("--r2", type=float, default=0.01)
    ex.add_argument("--samples", type=int, default=1_000_000)
    ex.add_argument("--downsample-voxel", type=float, default=0.005)
    ex.add_argument("--erosion-iters", type=int, default=2)
    ex.add_argument("--merge-ratio", type=float, default=3.0)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--threads", type=int, default=1)
    ex.add_argument("--lambda1", type=float, default=1000.0)
    ex.add_argument("--refine-iters", type=int, default=200)
    ex.add_argument("--refine-step", type=float, default=5e-4)
    ex.add_argument("--no-refine", action="store_true")
    ex.add_argument("--dump-labels", metavar="PATH")
    ex.add_argument("--dump-signfield", metavar="PATH")
    ex.set_defaults(func=cmd_extract)

    ev = sub.add_parser("eval", help="evaluate a mesh against a reference")
    ev.add_argument("--mesh", required=True)
    ev.add_argument("--ref", required=True, help="mesh path or fixture:NAME")
    ev.add_argument("--report", required=True, help="output JSON path")
    ev.add_argument("--csv", help="append a CSV row to this file")
    ev.add_argument("--samples", type=int, default=100_000)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--threads", type=int, default=1)
    ev.set_defaults(func=cmd_eval)

    gf = sub.add_parser("gen-fixture", help="write an analytic fixture as UDFG")
    gf.add_argument("name", choices=FIXTURE_NAMES)
    gf.add_argument("--resolution", type=int, default=64)
    gf.add_argument("--out", required=True)
    gf.set_defaults(func=cmd_gen_fixture)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG
    except PipelineError as e:
        log.error("%s", e)
        return EXIT_EMPTY if e.code == CODE_EMPTY else EXIT_STAGE
    except OSError as e:
        log.error("I/O error: %s", e)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
