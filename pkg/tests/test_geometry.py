import numpy as np
import pytest

from netfield import (
    Ball,
    Box,
    ConstantField,
    FuncField,
    NumericalError,
    PointCloud,
    VoxelMask,
    ball_mask,
    boundary_band,
    domain_from_spec,
    normalize,
    read_voxel_mask,
    sample_points,
    write_voxel_mask,
)


def test_box_basics():
    b = Box([0.0, -1.0], [2.0, 1.0])
    assert b.volume() == pytest.approx(4.0)
    assert b.diameter() == pytest.approx(np.sqrt(8.0))
    assert b.contains(np.array([1.0, 0.0]))
    assert not b.contains(np.array([3.0, 0.0]))
    inside = np.array([[0.5, 0.5], [-0.5, 0.0]])
    np.testing.assert_array_equal(b.contains(inside), [True, False])


def test_box_distance_to_boundary():
    b = Box([0.0, 0.0], [1.0, 1.0])
    d = b.distance_to_boundary(np.array([[0.5, 0.2], [0.1, 0.9]]))
    np.testing.assert_allclose(d, [0.2, 0.1])


def test_ball_volume_and_sampling(rng):
    ball = Ball([1.0, 2.0], 0.5)
    assert ball.volume() == pytest.approx(np.pi * 0.25)
    pts = ball.sample_uniform(4000, rng)
    assert ball.contains(pts).all()
    # radial cdf r^2: mean radius should be 2R/3
    r = np.linalg.norm(pts - np.array([1.0, 2.0]), axis=1)
    assert r.mean() == pytest.approx(2 * 0.5 / 3, abs=0.01)


def test_sample_points_uniform_and_deterministic(unit_box_2d):
    c1 = sample_points(unit_box_2d, None, 100, seed=7)
    c2 = sample_points(unit_box_2d, None, 100, seed=7)
    np.testing.assert_array_equal(c1.points, c2.points)
    assert c1.points.shape == (100, 2)
    assert unit_box_2d.contains(c1.points).all()
    c3 = sample_points(unit_box_2d, None, 100, seed=8)
    assert not np.array_equal(c1.points, c3.points)


def test_sample_points_follows_density():
    # rho(x) proportional to x on [0,1]: mean of samples -> 2/3
    dom = Box([0.0], [1.0])
    rho = FuncField(lambda p: p[:, 0], name="ramp")
    cloud = sample_points(dom, rho, 4000, seed=3)
    assert cloud.points.mean() == pytest.approx(2.0 / 3.0, abs=0.02)
    np.testing.assert_allclose(cloud.density, cloud.points[:, 0])


def test_sample_points_envelope_restart_is_deterministic():
    # density whose max is likely missed by the probe: narrow bump
    dom = Box([0.0], [1.0])
    rho = FuncField(lambda p: 1.0 + 40.0 * np.exp(-((p[:, 0] - 0.5) ** 2) / 1e-4),
                    name="bump")
    a = sample_points(dom, rho, 200, seed=11)
    b = sample_points(dom, rho, 200, seed=11)
    np.testing.assert_array_equal(a.points, b.points)


def test_sample_points_aborts_on_vanishing_acceptance():
    dom = Box([0.0], [1.0])
    # spike placed on a probe point so the envelope is honest yet almost
    # no proposal ever lands inside it
    p0 = float(dom.sample_uniform(4096, np.random.default_rng(2))[0, 0])
    rho = FuncField(
        lambda p: np.where(np.abs(p[:, 0] - p0) < 1e-5, 1.0, 0.0),
        name="needle")
    with pytest.raises(NumericalError):
        sample_points(dom, rho, 50, seed=2)


def test_sample_points_rejects_negative_density(unit_box_2d):
    rho = FuncField(lambda p: p[:, 0] - 0.5, name="signed")
    with pytest.raises(ValueError):
        sample_points(unit_box_2d, rho, 50, seed=0)


def test_point_cloud_needs_two_points():
    with pytest.raises(ValueError):
        PointCloud(points=np.zeros((1, 2)), density=np.ones(1), seed=0)


def test_normalize_round_trip(ball_3d):
    cloud = sample_points(ball_3d, None, 500, seed=4)
    normed, stats = normalize(cloud)
    np.testing.assert_allclose(normed.points.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(normed.points.std(axis=0), 1.0, rtol=1e-12)
    back = stats.invert(normed.points)
    np.testing.assert_allclose(back, cloud.points, rtol=1e-12, atol=1e-12)
    fresh = stats.apply(cloud.points)
    np.testing.assert_allclose(fresh, normed.points, rtol=1e-12, atol=1e-12)


def test_normalize_rejects_degenerate_axis():
    pts = np.zeros((10, 2))
    pts[:, 0] = np.arange(10.0)
    cloud = PointCloud(points=pts, density=np.ones(10), seed=0)
    with pytest.raises(ValueError):
        normalize(cloud)


def test_boundary_band(unit_box_2d):
    band = boundary_band(unit_box_2d, 0.1)
    assert band(np.array([0.05, 0.5]))
    assert not band(np.array([0.5, 0.5]))
    flags = band(np.array([[0.95, 0.5], [0.3, 0.3]]))
    np.testing.assert_array_equal(flags, [True, False])


def test_ball_mask_connectivity_and_volume():
    dom = ball_mask((40, 40), 0.05, center=[0.0, 0.0], radius=1.0, origin=[-1.0, -1.0])
    assert isinstance(dom, VoxelMask)
    # voxelized disk area approaches pi r^2
    assert dom.volume() == pytest.approx(np.pi, rel=0.05)
    assert dom.contains(np.array([0.0, 0.0]))
    assert not dom.contains(np.array([2.0, 0.0]))


def test_voxel_mask_rejects_disconnected():
    mask = np.zeros((9, 9), dtype=bool)
    mask[1:3, 1:3] = True
    mask[6:8, 6:8] = True  # diagonal contact only, not face-connected
    with pytest.raises(ValueError):
        VoxelMask(mask, spacing=0.1, origin=[0.0, 0.0])


def test_voxel_mask_boundary_distance_interior_peak():
    mask = np.ones((11, 11), dtype=bool)
    dom = VoxelMask(mask, spacing=1.0, origin=[0.0, 0.0])
    center = np.array([5.5, 5.5])
    edge = np.array([0.6, 5.5])
    assert dom.distance_to_boundary(center) > dom.distance_to_boundary(edge)


def test_voxel_mask_sampling_stays_inside():
    dom = ball_mask((24, 24), 2.0 / 24, center=[0.0, 0.0], radius=1.0, origin=[-1.0, -1.0])
    cloud = sample_points(dom, None, 300, seed=5)
    assert dom.contains(cloud.points).all()


def test_voxel_mask_file_round_trip(tmp_path):
    dom = ball_mask((16, 16), 0.125, center=[0.0, 0.0], radius=1.0, origin=[-1.0, -1.0])
    path = tmp_path / "mask.vxm"
    write_voxel_mask(path, dom)
    back = read_voxel_mask(path)
    np.testing.assert_array_equal(back.mask, dom.mask)
    assert back.spacing == dom.spacing
    np.testing.assert_allclose(back.origin, dom.origin)
    # byte stability
    raw1 = path.read_bytes()
    write_voxel_mask(path, back)
    assert path.read_bytes() == raw1


def test_domain_from_spec_round_trip(tmp_path):
    box = Box([0.0, 0.0], [1.0, 2.0])
    ball = Ball([0.5, 0.5, 0.5], 1.5)
    for dom in (box, ball):
        clone = domain_from_spec(dom.spec())
        assert type(clone) is type(dom)
        np.testing.assert_allclose(clone.bounding_box()[0], dom.bounding_box()[0])
        np.testing.assert_allclose(clone.bounding_box()[1], dom.bounding_box()[1])
    vm = ball_mask((12, 12), 1.0 / 6, center=[0.0, 0.0], radius=1.0, origin=[-1.0, -1.0])
    path = tmp_path / "m.vxm"
    write_voxel_mask(path, vm)
    clone = domain_from_spec({"kind": "voxel-mask", "path": str(path)})
    np.testing.assert_array_equal(clone.mask, vm.mask)
