import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdbem.geometry import (
    Mesh,
    ScreenKind,
    disc_ring_radii,
    euler_characteristic,
    graded_coordinates,
    graded_disc_mesh,
    graded_square_mesh,
    horn_surface_mesh,
    mesh_diameter,
)


def test_graded_coordinates_formula():
    xs = graded_coordinates(4, 2.0)
    k = np.arange(5)
    expected = -1 + (k / 4) ** 2
    np.testing.assert_allclose(xs[:5], expected, atol=1e-15)
    np.testing.assert_allclose(xs[4:], -expected[::-1], atol=1e-15)


def test_uniform_square_matches_linspace():
    m = graded_square_mesh(3, 1.0)
    xs = np.unique(m.nodes[:, 0])
    np.testing.assert_allclose(xs, np.linspace(-1, 1, 7), atol=1e-15)


@pytest.mark.parametrize("levels", [1, 2, 4, 7])
def test_square_triangle_count_and_area(levels):
    m = graded_square_mesh(levels, 2.0)
    assert len(m.triangles) == 8 * levels**2
    assert m.areas.sum() == pytest.approx(4.0, abs=1e-13)
    assert (m.areas > 0).all()
    assert euler_characteristic(m) == 1


def test_disc_radii_and_count():
    r = disc_ring_radii(5, 2.0)
    np.testing.assert_allclose(r, 1 - (np.arange(6) / 5) ** 2, atol=1e-15)
    m = graded_disc_mesh(18, 2.0)
    assert len(m.triangles) == 2662
    assert euler_characteristic(m) == 1


def test_disc_nodes_on_rings():
    m = graded_disc_mesh(4, 3.0)
    radii = np.linalg.norm(m.nodes[:, :2], axis=1)
    rings = disc_ring_radii(4, 3.0)
    assert np.min(np.abs(radii[:, None] - rings[None, :]), axis=1).max() < 1e-14
    assert m.kind is ScreenKind.DISC


@pytest.mark.parametrize("beta", [0.5, 0.0, -1.0])
def test_rejects_beta_below_one(beta):
    with pytest.raises(ValueError):
        graded_square_mesh(3, beta)
    with pytest.raises(ValueError):
        graded_disc_mesh(3, beta)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.floats(1.0, 4.0))
def test_grading_monotone_and_symmetric(levels, beta):
    xs = graded_coordinates(levels, beta)
    assert np.all(np.diff(xs) > 0)
    np.testing.assert_allclose(xs, -xs[::-1], atol=1e-15)
    m = graded_square_mesh(levels, beta)
    assert m.areas.sum() == pytest.approx(4.0, rel=1e-12)
    # grading concentrates small elements at the boundary
    assert m.h_min <= m.h_max


def test_mesh_roundtrip_and_digest(tmp_path):
    m = graded_square_mesh(2, 2.0)
    m2 = Mesh.from_dict(m.to_dict())
    assert m2.digest() == m.digest()
    np.testing.assert_array_equal(m2.triangles, m.triangles)
    assert m.translated((0, 0, 1)).digest() != m.digest()


def test_normals_and_diameter():
    m = graded_square_mesh(2, 1.0)
    assert np.allclose(np.abs(m.normals[:, 2]), 1.0)
    assert mesh_diameter(m) == pytest.approx(2 * np.sqrt(2))
    assert m.is_flat


def test_horn_mesh_is_curved():
    m = horn_surface_mesh(0.3, 0.0, 8)
    assert not m.is_flat
    assert (m.areas > 0).all()
    np.testing.assert_allclose(np.linalg.norm(m.normals, axis=1), 1.0)
