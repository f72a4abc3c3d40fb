"""Shared fixtures: cached pipeline runs and desk-scale configurations.

Full-resolution (128) pipeline runs are expensive; they are memoized per
configuration key for the whole session so the acceptance criteria can share
them. Desk-scale unit tests use res 64 with proportionally scaled envelopes
(r1=0.1, r2=0.02): the envelope must span enough voxel layers to survive the
erosion rounds, mirroring the published ratios at res 256.
"""

import numpy as np
import pytest

from mimesh import PipelineConfig, make_fixture, run_pipeline
from mimesh.refine import RefineConfig

_RUN_CACHE = {}


def desk_config(resolution=64, **kw):
    """Desk-scale configuration with envelopes scaled to the grid."""
    base = dict(resolution=resolution, r1=0.1, r2=0.02, sample_count=120_000,
                refine=RefineConfig(iterations=40))
    base.update(kw)
    return PipelineConfig(**base)


def full_config(**kw):
    """Acceptance-scale configuration: res 128, published defaults."""
    base = dict(resolution=128)
    base.update(kw)
    return PipelineConfig(**base)


def _cfg_key(name, cfg: PipelineConfig):
    r = cfg.refine
    return (name, cfg.resolution, cfg.r1, cfg.r2, cfg.sample_count,
            cfg.downsample_voxel, cfg.erosion_iters, cfg.merge_ratio, cfg.seed,
            cfg.signfield_radius, cfg.skip_refine,
            r.lambda1, r.iterations, r.step, r.naive_laplacian)


def cached_run(name, cfg: PipelineConfig, **fixture_params):
    key = _cfg_key(name, cfg) + tuple(sorted(fixture_params.items()))
    if key not in _RUN_CACHE:
        _RUN_CACHE[key] = run_pipeline(make_fixture(name, **fixture_params), cfg)
    return _RUN_CACHE[key]


@pytest.fixture(scope="session")
def sphere_desk():
    return cached_run("sphere", desk_config())


@pytest.fixture(scope="session")
def tjunction_desk():
    return cached_run("t-junction", desk_config())


@pytest.fixture(scope="session")
def disk_desk():
    return cached_run("plane-disk", desk_config())


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
