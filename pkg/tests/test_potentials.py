import numpy as np
import pytest

from oracles import sample_triangle
from tdbem.geometry import graded_square_mesh, horn_surface_mesh
from tdbem.mot import DensityHistory
from tdbem.potentials import evaluate_halfspace_pressure, evaluate_single_layer, incident_point_source

TRI = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def _single_triangle_mesh():
    from tdbem.geometry import Mesh

    return Mesh(TRI, [[0, 1, 2]], [0, 1, 2])


def test_constant_density_against_monte_carlo():
    # psi = 1 for all t > 0: u(t, x) = 1/(4 pi) int_{T cap B(x, t)} 1/r
    mesh = _single_triangle_mesh()
    dt, N = 0.1, 20
    hist = DensityHistory(np.vstack([np.zeros(1), np.ones((N, 1))]), dt, "single_layer")
    x = np.array([0.3, 0.2, 0.5])
    probe = evaluate_single_layer(hist, mesh, [x], [0.8, 1.5])
    y = sample_triangle(TRI, 2_000_000, np.random.default_rng(0))
    r = np.linalg.norm(y - x, axis=1)
    for t, val in zip([0.8, 1.5], probe.series(0)):
        ref = 0.5 * np.mean(np.where(r <= t, 1 / r, 0.0)) / (4 * np.pi)
        assert val == pytest.approx(ref, rel=5e-3)


def test_causality_of_potential():
    mesh = _single_triangle_mesh()
    hist = DensityHistory(np.vstack([np.zeros(1), np.ones((10, 1))]), 0.1, "single_layer")
    x = [0.2, 0.2, 2.0]
    assert evaluate_single_layer(hist, mesh, [x], [1.9]).values[0, 0] == 0.0
    assert evaluate_single_layer(hist, mesh, [x], [2.1]).values[0, 0] > 0.0


def test_single_layer_potential_is_even_in_z():
    mesh = graded_square_mesh(2, 2.0)
    rng = np.random.default_rng(0)
    hist = DensityHistory(np.vstack([np.zeros(32), rng.normal(size=(10, 32))]), 0.1, "single_layer")
    a = evaluate_single_layer(hist, mesh, [[0.2, 0.1, 0.4]], [0.7, 1.0]).values
    b = evaluate_single_layer(hist, mesh, [[0.2, 0.1, -0.4]], [0.7, 1.0]).values
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_halfspace_pressure_is_mirror_symmetric():
    mesh = horn_surface_mesh(0.3, 0.05, 6)
    nt = len(mesh.triangles)
    rng = np.random.default_rng(1)
    hist = DensityHistory(np.vstack([np.zeros(nt), rng.normal(size=(12, nt))]), 0.05, "horn_adjoint_dl")
    p = np.array([0.5, 0.1, 0.3])
    a = evaluate_halfspace_pressure(hist, mesh, [p], [0.4, 0.6]).values
    b = evaluate_halfspace_pressure(hist, mesh, [p * [1, 1, -1]], [0.4, 0.6]).values
    np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-14)


def test_incident_spectrum_of_source_on_plane():
    # source on z = 0 coincides with its image: amplitude doubles
    probe = incident_point_source([0.0, 0.0, 0.0], [[1.0, 0.0, 0.0]], [0.0, 3.0])
    np.testing.assert_allclose(np.abs(probe.values[:, 0]), 2 / (4 * np.pi))
    assert probe.values[1, 0] == pytest.approx(2 * np.exp(-3j) / (4 * np.pi))
