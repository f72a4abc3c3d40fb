"""Field sources: analytic fixtures, grids, gradients, UDFG format."""

import numpy as np
import pytest

from mimesh.fields import (FIXTURE_NAMES, GridSpec, PointSetField,
                           finite_difference_gradient, gradient, make_fixture,
                           read_udfg, sample_grid, write_udfg)


def test_plane_distance_point():
    f = make_fixture("plane-disk", radius=10.0)  # large disk: plane locally
    assert f.eval([0.1, 0.2, 0.3]) == pytest.approx(0.3, abs=1e-15)


def test_sphere_on_surface():
    f = make_fixture("sphere", radius=0.4)
    assert f.eval([0.4, 0.0, 0.0]) == 0.0


def test_disk_rim_distance():
    f = make_fixture("plane-disk", radius=0.4)
    assert f.eval([0.5, 0.0, 0.0]) == pytest.approx(0.1, abs=1e-12)


def test_tjunction_zero_on_junction_line():
    f = make_fixture("t-junction")
    for y in (-0.4, -0.1, 0.0, 0.25, 0.4):
        assert f.eval([0.0, y, 0.0]) == 0.0


def test_fixture_names_and_unknown():
    for name in FIXTURE_NAMES:
        make_fixture(name)
    with pytest.raises(ValueError):
        make_fixture("dodecahedron")
    with pytest.raises(ValueError):
        make_fixture("sphere", wrong_param=1)


def test_nonnegative_and_lipschitz(rng):
    # 1-Lipschitz: |d(p) - d(q)| <= |p - q| on random pairs, all fixtures.
    for name in FIXTURE_NAMES:
        f = make_fixture(name)
        p = rng.uniform(-0.6, 0.6, size=(300, 3))
        q = rng.uniform(-0.6, 0.6, size=(300, 3))
        dp, dq = f.eval(p), f.eval(q)
        assert np.all(dp >= 0) and np.all(dq >= 0)
        assert np.all(np.abs(dp - dq) <= np.linalg.norm(p - q, axis=1) + 1e-12)


def test_gradient_plane_exact():
    f = make_fixture("plane-disk", radius=10.0)
    g = gradient(f, [0.0, 0.0, 0.2])
    assert np.allclose(g, [0, 0, 1], atol=1e-9)


def test_gradient_fd_matches_exact_on_sphere():
    f = make_fixture("sphere", radius=0.4)
    g = gradient(f, [0.5, 0.0, 0.0], h=1e-4)
    assert np.allclose(g, [1, 0, 0], atol=1e-6)


def test_gradient_zero_between_parallel_planes():
    # Midpoint between the planes is a local maximum of the distance: the
    # central difference cancels exactly.
    f = make_fixture("two-parallel-planes", gap=0.1)
    g = gradient(f, [0.0, 0.0, 0.0], h=1e-3)
    assert np.linalg.norm(g) < 1e-9


def test_fd_gradient_second_order(rng):
    # Away from surface and medial set, FD error is O(h^2).
    f = make_fixture("sphere", radius=0.4)
    pts = rng.normal(size=(50, 3))
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True) * 0.45  # off-surface
    exact = f.gradient(pts)
    for h, tol in ((1e-3, 1e-5), (1e-4, 1e-7)):
        fd = finite_difference_gradient(f, pts, h)
        assert np.max(np.abs(fd - exact)) < tol


def test_grid_spec_voxel_size_paper_scale():
    spec = GridSpec(256)
    assert spec.uniform_voxel == pytest.approx(0.0046875, abs=0)


def test_grid_spec_index_roundtrip(rng):
    spec = GridSpec((32, 48, 17))
    idx = np.column_stack([rng.integers(0, n, size=200)
                           for n in spec.resolution])
    centers = spec.center(idx)
    assert np.array_equal(spec.index_of(centers), idx)


def test_grid_spec_invalid():
    with pytest.raises(ValueError):
        GridSpec(0)
    with pytest.raises(ValueError):
        GridSpec(8, np.array([[0, 0, 0], [0, 1, 1]]))


def test_sample_grid_exact_at_nodes():
    f = make_fixture("sphere")
    spec = GridSpec(32)
    grid = sample_grid(f, spec)
    centers = spec.all_centers()
    assert np.allclose(grid.eval(centers),
                       f.eval(centers).astype(np.float32), atol=0)


def test_grid_trilinear_exact_for_linear_function():
    # A plane's distance is linear in z near the plane: trilinear
    # interpolation reproduces it to round-off away from nodes.
    f = make_fixture("plane-disk", radius=10.0)
    spec = GridSpec(64)
    grid = sample_grid(f, spec)
    pts = np.array([[0.013, -0.021, 0.107], [0.2, 0.1, -0.309], [0.0, 0.0, 0.2513]])
    assert np.allclose(grid.eval(pts), np.abs(pts[:, 2]), atol=1e-6)


def test_grid_resample_idempotent():
    spec = GridSpec(24)
    grid = sample_grid(make_fixture("sphere"), spec)
    again = sample_grid(grid, spec)
    assert np.array_equal(grid.values, again.values)


def test_grid_out_of_bbox_clamps():
    grid = sample_grid(make_fixture("sphere"), GridSpec(16))
    inside = grid.eval([0.59, 0.0, 0.0])
    outside = grid.eval([5.0, 0.0, 0.0])
    assert outside == pytest.approx(grid.eval([0.6, 0.0, 0.0]))
    assert np.isfinite(inside)


def test_udfg_roundtrip_and_header(tmp_path):
    grid = sample_grid(make_fixture("sphere"), GridSpec(16))
    path = tmp_path / "s.udfg"
    write_udfg(path, grid)
    raw = path.read_bytes()
    # magic(4) + version(4) + dims(12) + f64 bbox(48) + f32 payload
    assert raw[:4] == b"UDFG"
    assert len(raw) == 68 + 4 * 16 ** 3
    back = read_udfg(path)
    assert back.spec.resolution == grid.spec.resolution
    assert np.array_equal(back.values, grid.values)
    assert np.array_equal(back.spec.bbox, grid.spec.bbox)
    write_udfg(tmp_path / "s2.udfg", grid)
    assert (tmp_path / "s2.udfg").read_bytes() == raw


def test_udfg_payload_order_x_fastest(tmp_path):
    spec = GridSpec((2, 2, 2), np.array([[0., 0., 0.], [1., 1., 1.]]))
    values = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    from mimesh.fields import GridField
    path = tmp_path / "o.udfg"
    write_udfg(path, GridField(spec, values))
    payload = np.frombuffer(path.read_bytes()[68:], dtype="<f4")
    # x fastest: [0,0,0],[1,0,0],[0,1,0],[1,1,0],...
    assert np.array_equal(payload, values.ravel(order="F"))


def test_point_set_field_nn_distance():
    pts = np.array([[0., 0., 0.], [1., 0., 0.]])
    f = PointSetField(pts)
    assert f.eval([0.2, 0.0, 0.0]) == pytest.approx(0.2)
    assert f.eval([0.7, 0.0, 0.0]) == pytest.approx(0.3)
