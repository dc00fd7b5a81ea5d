import numpy as np
import pytest

from bchar.balls import Ball, ball_volume, pack_cells
from bchar.cases import deformation, rotation_stretch, solid_rotation, translation
from bchar.flow import VelocityField, cardinal_offsets, track_ball, track_cloud, track_point, track_points
from bchar.mesh import Domain, build_mesh


@pytest.fixture
def unit16():
    return build_mesh(Domain.unit((16, 16)))


@pytest.mark.parametrize("substeps", [1, 3, 16])
def test_constant_field_backtrack_exact(unit16, substeps):
    foot = track_point(translation((1 / 16, 0.0)), unit16, (0.5, 0.5), 0.8, 0.0, substeps)
    assert foot == pytest.approx((0.45, 0.5), abs=1e-15)


def test_rotation_quarter_turn(unit16):
    foot = track_point(solid_rotation(), unit16, (0.75, 0.5), np.pi / 2, 0.0, 64)
    np.testing.assert_allclose(foot, (0.5, 0.25), atol=1e-6)


def test_zero_field_identity(unit16, rng):
    zero = translation((0.0, 0.0))
    pts = rng.uniform(size=(20, 2))
    out, clamped = track_points(zero, unit16, pts, 1.0, 0.0)
    np.testing.assert_array_equal(out, pts)
    assert clamped == 0


@pytest.mark.parametrize("field", [rotation_stretch(), deformation(5.0)])
def test_round_trip(unit16, field, rng):
    pts = rng.uniform(0.2, 0.8, size=(50, 2))
    back, _ = track_points(field, unit16, pts, 1.3, 0.9, 32)
    fwd, _ = track_points(field, unit16, back, 0.9, 1.3, 32)
    np.testing.assert_allclose(fwd, pts, atol=1e-9)


def test_rk4_fourth_order(unit16):
    # error of a 2 pi revolution drops ~16x per halving of the substep
    start = np.array([[0.8, 0.5]])
    errs = []
    for n in (8, 16, 32):
        end, _ = track_points(solid_rotation(), unit16, start, 2 * np.pi, 0.0, n)
        errs.append(np.linalg.norm(end - start))
    assert errs[0] / errs[1] > 12 and errs[1] / errs[2] > 12


def test_clamping_counted():
    mesh = build_mesh(Domain.unit((4, 4)))
    out, clamped = track_points(translation((1.0, 0.0)), mesh, [[0.1, 0.5]], 1.0, 0.0, 4)
    assert out[0] == pytest.approx((0.0, 0.5))
    assert clamped > 0


def test_periodic_wrap():
    mesh = build_mesh(Domain.unit((4, 4)), periodic=(True, False))
    out, clamped = track_points(translation((0.25, 0.0)), mesh, [[0.1, 0.5]], 1.0, 0.0, 4)
    assert out[0] == pytest.approx((0.85, 0.5))
    assert clamped == 0


@pytest.mark.parametrize(
    "field,dim",
    [(rotation_stretch(), 2), (solid_rotation(), 2), (deformation(5.0), 2), (rotation_stretch(1 / 16), 3)],
)
def test_builtin_fields_divergence_free(field, dim, rng):
    pts = rng.uniform(0.05, 0.95, size=(200, dim))
    h = 1e-5
    div = np.zeros(len(pts))
    for a in range(dim):
        e = np.zeros(dim)
        e[a] = h
        div += (field(pts + e, 0.7)[:, a] - field(pts - e, 0.7)[:, a]) / (2 * h)
    assert np.max(np.abs(div)) < 1e-8


def test_track_ball_translation(unit16):
    tb = track_ball(translation((1 / 16, 0.0)), unit16, Ball((0.25, 0.25), 0.1), (0, 0), 0.8, 0.0)
    assert tb.center == pytest.approx((0.2, 0.25), abs=1e-15)
    assert tb.radius == 0.1 and tb.equiv_porosity == 1.0


def test_track_cloud_zero_field(unit16):
    cloud = pack_cells(unit16)
    tr = track_cloud(translation((0.0, 0.0)), cloud, 1.0, 0.5)
    np.testing.assert_array_equal(tr.centers, cloud.centers)
    np.testing.assert_array_equal(tr.radii, cloud.radii)
    np.testing.assert_array_equal(tr.tracked_volume, unit16.porous_volume)


def test_track_cloud_translation_shift(unit16):
    cloud = pack_cells(unit16)
    mesh = cloud.mesh
    u = np.array([0.01, -0.02])
    tr = track_cloud(translation(u), cloud, 1.0, 0.8)
    inside = np.all((cloud.centers - 0.8 * u > 0) & (cloud.centers - 0.8 * u < 1), axis=1)
    np.testing.assert_allclose(tr.centers[inside], cloud.centers[inside] - 0.8 * u, atol=1e-15)
    assert mesh.n_cells == 256
    np.testing.assert_array_equal(tr.radii, cloud.radii)


@pytest.mark.parametrize("porosity", [1.0, "varying"])
def test_estimated_radii_preserve_porous_ball_volume(porosity, rng):
    dom = Domain.unit((8, 8))
    phi = 1.0 if porosity == 1.0 else rng.uniform(0.5, 1.0, size=64)
    mesh = build_mesh(dom, phi)
    cloud = pack_cells(mesh)
    tr = track_cloud(rotation_stretch(), cloud, 1.0, 0.5, estimate_radii=True)
    lhs = ball_volume(tr.radii, 2) * tr.equiv_porosity
    rhs = ball_volume(cloud.radii, 2) * mesh.porosity[cloud.cell]
    np.testing.assert_allclose(lhs, rhs, rtol=1e-14)


def test_estimated_radius_rigid_rotation(unit16):
    cloud = pack_cells(unit16)
    tr = track_cloud(solid_rotation(), cloud, 1.0, 0.1, estimate_radii=True)
    interior = np.linalg.norm(cloud.centers - 0.5, axis=1) < 0.4
    np.testing.assert_allclose(tr.radii[interior], cloud.radii[interior], rtol=1e-8)


@pytest.mark.parametrize("dim,count", [(2, 4), (2, 7), (3, 6), (3, 20)])
def test_cardinal_offsets_unit(dim, count):
    d = cardinal_offsets(dim, count)
    assert d.shape == (count, dim)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-14)


def test_velocity_scaled():
    f = translation((1.0, 2.0)).scaled(0.5)
    np.testing.assert_allclose(f(np.zeros((1, 2))), [[0.5, 1.0]])
    assert isinstance(f, VelocityField)
