import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdbem.analysis import (
    StudyReport,
    amplification_spectrum,
    energy_error,
    evaluate_density,
    fit_convergence_rate,
    fit_power_exponent,
    fit_singular_exponent,
    graded_interpolation_error,
    interpolation_lemma_study,
    l2_spacetime_error,
    lift_density,
    locate_points,
    peak_band_contrast,
    section_samples,
)
from tdbem.assembly import PlaneWavePacket, assemble_rhs, assemble_single_layer
from tdbem.geometry import graded_disc_mesh, graded_square_mesh
from tdbem.mot import DensityHistory, march
from tdbem.potentials import FieldProbe
from tdbem.timegrid import TimeGrid


def p0_history(mesh, fn, n_steps=4, dt=0.25):
    vals = fn(mesh.centroids)
    coef = np.vstack([np.zeros(len(vals)), np.tile(vals, (n_steps, 1))])
    return DensityHistory(coef, dt, "single_layer")


@settings(max_examples=20, deadline=None)
@given(st.floats(-2.0, -0.1), st.floats(0.1, 10.0))
def test_rate_fit_recovers_power_law(rate, c):
    dof = np.array([10, 40, 160, 640])
    assert fit_convergence_rate(zip(dof, c * dof**rate)) == pytest.approx(rate, abs=1e-10)


def test_power_exponent():
    d = np.geomspace(0.01, 0.3, 8)
    assert fit_power_exponent(d, 3 * d**-0.5) == pytest.approx(-0.5)


def test_locate_points_barycentric():
    mesh = graded_square_mesh(3, 2.0)
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-1, 1, (200, 2)), np.zeros(200)])
    idx, bary = locate_points(mesh, pts)
    assert (idx >= 0).all()
    rebuilt = np.einsum("pk,pkd->pd", bary, mesh.vertices[idx])
    np.testing.assert_allclose(rebuilt, pts, atol=1e-12)
    idx, _ = locate_points(mesh, [[1.5, 0.0, 0.0]])
    assert idx[0] == -1


def test_p1_density_reproduces_linear_function():
    mesh = graded_square_mesh(3, 2.0)
    f = lambda p: 1 + 2 * p[:, 0] - p[:, 1]
    coef = np.vstack([np.zeros(len(mesh.nodes)), f(mesh.nodes)])
    hist = DensityHistory(coef, 0.1, "dtn_single_layer", basis="p1")
    pts = np.array([[0.1, 0.3, 0], [-0.77, 0.5, 0]])
    np.testing.assert_allclose(evaluate_density(hist, mesh, pts)[1], f(pts), atol=1e-13)


def test_l2_error_of_constant_offset():
    a = graded_square_mesh(2, 2.0)
    b = graded_square_mesh(3, 1.0)
    ha = p0_history(a, lambda c: np.ones(len(c)))
    hb = p0_history(b, lambda c: np.full(len(c), 3.0))
    # |difference| = 2 on [0, 1] x screen of area 4
    assert l2_spacetime_error((ha, a), (hb, b)) == pytest.approx(2 * math.sqrt(4 * 1.0), rel=1e-12)
    assert l2_spacetime_error((ha, a), (ha, a)) == 0.0


def test_l2_error_rejects_mismatched_inputs():
    a = graded_square_mesh(2, 2.0)
    d = graded_disc_mesh(2, 2.0)
    with pytest.raises(ValueError):
        l2_spacetime_error((p0_history(a, lambda c: c[:, 0]), a), (p0_history(d, lambda c: c[:, 0]), d))
    h1 = p0_history(a, lambda c: c[:, 0], dt=0.25)
    h2 = p0_history(a, lambda c: c[:, 0], dt=0.5)
    with pytest.raises(ValueError):
        l2_spacetime_error((h1, a), (h2, a))


def test_lift_preserves_piecewise_constants_on_nested_meshes():
    coarse = graded_square_mesh(2, 1.0)
    fine = graded_square_mesh(4, 1.0)
    h = p0_history(coarse, lambda c: np.sign(c[:, 0]) + 2 * np.sign(c[:, 1]))
    lifted = lift_density(h, coarse, fine)
    expected = np.sign(fine.centroids[:, 0]) + 2 * np.sign(fine.centroids[:, 1])
    np.testing.assert_allclose(lifted[1], expected, atol=1e-12)


def test_energy_error_zero_for_exact_and_positive_otherwise():
    mesh = graded_square_mesh(2, 2.0)
    g = TimeGrid(0.1, 10)
    V = assemble_single_layer(mesh, g)
    rhs = assemble_rhs(mesh, g, PlaneWavePacket())
    h = march(V, rhs)
    assert energy_error(V, h, h, rhs) < 1e-12 * np.abs(h.coefficients).max()
    pert = DensityHistory(h.coefficients * 1.01, h.dt, h.operator_id)
    assert energy_error(V, pert, h, rhs) > 0


def test_singular_exponent_of_synthetic_edge_density():
    mesh = graded_square_mesh(12, 3.0)
    hist = p0_history(mesh, lambda c: (1 - np.abs(c[:, 0])) ** -0.5)
    fit = fit_singular_exponent(hist, mesh, "edge_y0", 0.5)
    assert fit.exponent == pytest.approx(-0.5, abs=0.05)
    assert fit.n_points >= 4 and fit.window[1] <= 0.3


def test_section_samples_on_disc_and_corner():
    d = graded_disc_mesh(6, 2.0)
    pts, dist = section_samples(d, "edge_y0")
    np.testing.assert_allclose(dist, 1 - np.linalg.norm(pts[:, :2], axis=1))
    s = graded_square_mesh(4, 2.0)
    pts, dist = section_samples(s, "corner_diag")
    np.testing.assert_allclose(pts[:, 0], pts[:, 1])
    assert (dist > 0).all()


@pytest.mark.parametrize("beta,expected", [(1.0, 1.0), (2.0, 2.0), (3.0, 2.0)])
def test_interpolation_rates(beta, expected):
    rep = interpolation_lemma_study(0.5, beta)
    assert rep.slopes["rate"] == pytest.approx(expected, abs=0.15)
    assert rep.slopes["predicted"] == expected


def test_interpolation_error_exact_for_linear():
    assert graded_interpolation_error(1.0, 2.0, 8) < 1e-14


def test_zero_scattered_field_gives_zero_db():
    dt = 0.01
    probe = FieldProbe(np.zeros((1, 3)), np.zeros((800, 1)), times=np.arange(800) * dt)
    w, f, dL = amplification_spectrum(probe, (0.08, 0, 0), (1.0, 0, 0), dt)
    assert len(dL) > 0
    np.testing.assert_array_equal(dL, 0.0)
    assert f.min() >= 200 and f.max() <= 2000


def test_spectrum_of_delayed_pulse():
    # scattered = -incident direct pulse: amplitude of the remaining image pulse
    dt = 0.001
    t = np.arange(4000) * dt
    r = 0.92
    p = np.zeros_like(t)
    k = int(round(r / dt))
    p[k] = -1 / (4 * np.pi * r) / dt
    probe = FieldProbe(np.zeros((1, 3)), p[:, None], times=t)
    _, _, dL = amplification_spectrum(probe, (0.08, 0, 0), (1.0, 0, 0), dt)
    # the source lies on the ground: removing one of the two equal pulses halves the field
    np.testing.assert_allclose(dL, 20 * np.log10(0.5), atol=0.05)


def test_peak_band_contrast():
    x = np.linspace(0, 10, 200)
    ref = np.sin(3 * x) * 5
    _, peaks = peak_band_contrast(ref, ref)
    other = ref + 0.01
    other[peaks] += 1.0
    ratio, found = peak_band_contrast(ref, other)
    assert len(found) == len(peaks) and ratio > 3


def test_study_report_io(tmp_path):
    rep = StudyReport("demo", config={"config_hash": "abc"})
    for n, e in [(10, 1.0), (40, 0.5), (160, 0.25)]:
        rep.rows.append({"series": "beta=2", "dof": n, "energy_error": e})
    assert rep.fit("energy_error", "beta=2") == pytest.approx(-0.5)
    rep.to_json(tmp_path / "r.json")
    rep.to_csv(tmp_path / "r.csv")
    assert "abc" in (tmp_path / "r.csv").read_text().splitlines()[0]
    with pytest.raises(ValueError):
        StudyReport("x", rows=rep.rows[:2]).fit("energy_error")


def test_disc_meshes_of_different_resolution_compare():
    a, b = graded_disc_mesh(3, 2.0), graded_disc_mesh(10, 2.0)
    ha = p0_history(a, lambda c: np.ones(len(c)))
    hb = p0_history(b, lambda c: np.ones(len(c)))
    assert l2_spacetime_error((ha, a), (hb, b)) == 0.0
    with pytest.raises(ValueError):
        evaluate_density(ha, a, [[0.999, 0.0, 0.0]])
    assert evaluate_density(ha, a, [[0.999, 0.0, 0.0]], snap=True)[1, 0] == 1.0
