"""Lag matrices against a brute-force reconstruction.

The reference rebuilds every entry from thin distance shells, weighting each
shell with the time integral of the retarded basis against the test function,
evaluated numerically at the shell midpoint.
"""

import numpy as np
import pytest
from scipy import integrate

from tdbem.assembly import (
    LagMatrixSequence,
    PlaneWavePacket,
    RingdownG,
    RingdownH,
    ZeroLoad,
    assemble_adjoint_double_layer_halfspace,
    assemble_dtn_blocks,
    assemble_hypersingular,
    assemble_rhs,
    assemble_single_layer,
    p1_mass_matrix,
    ringdown_integral,
    ringdown_profile,
)
from tdbem.geometry import graded_disc_mesh, graded_square_mesh
from tdbem.quadrature import KernelId, QuadratureRule, ShellSpec, shell_pair_integral
from tdbem.timegrid import TemporalBasis, TimeGrid, basis_value

DT = 0.25
FINE = 20
MESH = graded_square_mesh(1, 1.0)
GRID = TimeGrid(DT, 12)
RULE = QuadratureRule()


def fine_shells(lag):
    """Thin shells covering the coarse shells ``lag - 2 .. lag``."""
    lo = max(lag - 2, 0) * DT
    edges = lo + np.arange((lag + 1 - max(lag - 2, 0)) * FINE + 1) * DT / FINE
    return [ShellSpec(a, b) for a, b in zip(edges[:-1], edges[1:])]


def shell_sum(ta, tb, lag, weight, **kw):
    total = 0.0
    for s in fine_shells(lag):
        w = weight(0.5 * (s.r_lo + s.r_hi))
        if w != 0.0:
            total += w * shell_pair_integral(ta, tb, s, **kw)
    return total


def hat(m, t):
    return float(basis_value(TemporalBasis.HAT, m, t, DT))


def hat_dot(m, t, eps=1e-7):
    return (hat(m, t + eps) - hat(m, t - eps)) / (2 * eps)


def grad_dot(ta, a, tb, b):
    def grad(t, k):
        e1, e2 = t[1] - t[0], t[2] - t[0]
        G = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
        # gradients of barycentric coordinates 1, 2 in the triangle plane
        inv = np.linalg.inv(G)
        g1 = inv[0, 0] * e1 + inv[0, 1] * e2
        g2 = inv[1, 0] * e1 + inv[1, 1] * e2
        return [-g1 - g2, g1, g2][k]

    return float(grad(ta, a) @ grad(tb, b))


def corners_of(mesh, node):
    tri, loc = np.nonzero(mesh.triangles == node)
    return list(zip(tri, loc))


@pytest.mark.parametrize("lag", [0, 1, 4])
def test_single_layer_brute_force(lag):
    V = assemble_single_layer(MESH, GRID, RULE)
    n = 3 + lag
    m = 3

    def w(r):
        c = lambda t: float(basis_value(TemporalBasis.CONSTANT, m, t, DT))
        return c(n * DT - r) - c((n - 1) * DT - r)

    A = V.matrix(lag).toarray()
    for i, j in [(0, 0), (0, 1), (0, 5), (2, 7)]:
        ref = shell_sum(MESH.vertices[i], MESH.vertices[j], lag, w) / (4 * np.pi)
        assert A[i, j] == pytest.approx(ref, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("lag", [0, 2, 5])
def test_hypersingular_brute_force(lag):
    W = assemble_hypersingular(MESH, GRID, RULE)
    node = MESH.interior_nodes[0]
    n, m = 3 + lag, 3

    def w_time(r):
        # -(n.n) phi_dot Psi_ddot, Psi_dot = indicator of [t_{n-1}, t_n]
        return -(hat_dot(m, (n - 1) * DT - r) - hat_dot(m, n * DT - r))

    def q_time(r):
        val, _ = integrate.quad(lambda t: hat(m, t - r), (n - 1) * DT, n * DT, points=[m * DT + r])
        return val

    ref = 0.0
    for a, ka in corners_of(MESH, node):
        for b, kb in corners_of(MESH, node):
            ta, tb = MESH.vertices[a], MESH.vertices[b]
            ref += shell_sum(ta, tb, lag, w_time, basis_a=("linear", ka), basis_b=("linear", kb))
            ref += grad_dot(ta, ka, tb, kb) * shell_sum(ta, tb, lag, q_time)
    ref /= 2 * np.pi
    val = W.matrix(lag).toarray()[0, 0]
    assert val == pytest.approx(ref, rel=2e-3, abs=2e-3 * abs(W.matrix(0).toarray()[0, 0]))


@pytest.mark.parametrize("lag", [0, 1, 3])
def test_dtn_single_layer_brute_force(lag):
    D = assemble_dtn_blocks(MESH, GRID, RULE)
    Vh = D.blocks[(1, 1)].matrix(lag).toarray()
    n, m = 3 + lag, 3

    def w(r):
        return hat(m, (n - 1) * DT - r) - hat(m, n * DT - r)

    for i, j in [(4, 4), (0, 4), (0, 8)]:
        ref = 0.0
        for a, ka in corners_of(MESH, i):
            for b, kb in corners_of(MESH, j):
                ref += shell_sum(
                    MESH.vertices[a], MESH.vertices[b], lag, w, basis_a=("linear", ka), basis_b=("linear", kb)
                )
        ref /= 4 * np.pi
        assert Vh[i, j] == pytest.approx(ref, rel=2e-3, abs=1e-3 * abs(Vh).max())


def test_dtn_couplings_use_mass_matrix():
    D = assemble_dtn_blocks(MESH, GRID, RULE)
    M = p1_mass_matrix(MESH, MESH.interior_nodes, np.arange(len(MESH.nodes))).toarray()
    assert M.sum() == pytest.approx(4.0 / 8 * 8 / 3 * 1)  # hat of the centre node integrates to 4/3
    np.testing.assert_allclose(D.blocks[(0, 1)].matrix(0).toarray(), DT / 4 * M)
    np.testing.assert_allclose(D.blocks[(1, 0)].matrix(1).toarray(), 0.5 * M.T)
    assert D.shape == (1 + 9, 1 + 9)


def test_symmetry_and_cutoff():
    grid = TimeGrid(DT, 20)
    V = assemble_single_layer(MESH, grid, RULE)
    for lag in range(V.lag_cutoff + 1):
        A = V.matrix(lag)
        assert abs(A - A.T).max() < 1e-15
    diam = 2 * np.sqrt(2)
    assert V.lag_cutoff == int(np.ceil(diam / DT))
    assert V.matrix(V.lag_cutoff + 1).nnz == 0
    W = assemble_hypersingular(MESH, grid, RULE)
    assert W.lag_cutoff == int(np.ceil(diam / DT)) + 1


def test_single_layer_lags_telescope():
    # sum over lags of V_l - V_{l-1} leaves the full (last) shell matrix minus nothing
    V = assemble_single_layer(MESH, TimeGrid(DT, 20), RULE)
    total = sum(V.matrix(l).toarray() for l in range(V.lag_cutoff + 1))
    assert np.abs(total).max() < 1e-12


def test_history_matches_explicit_sum():
    V = assemble_single_layer(MESH, GRID, RULE)
    rng = np.random.default_rng(0)
    H = rng.normal(size=(V.shape[0], GRID.n_steps + 1))
    n = 9
    ref = sum(V.matrix(l) @ H[:, n - l] for l in range(1, n))
    np.testing.assert_allclose(V.history(H, n), ref, atol=1e-13)


@pytest.mark.parametrize("mesh", [graded_square_mesh(2, 2.0), graded_disc_mesh(2, 2.0)])
def test_flat_screen_adjoint_double_layer_is_identity_part_only(mesh):
    g = TimeGrid(0.2, 8)
    K = assemble_adjoint_double_layer_halfspace(mesh, g, RULE)
    A0 = K.matrix(0).toarray()
    np.testing.assert_allclose(A0, np.diag(-g.dt * mesh.areas), atol=1e-12)
    for lag in range(1, K.lag_cutoff + 1):
        assert np.abs(K.matrix(lag).toarray()).max(initial=0.0) < 1e-12


def test_ringdown_integral_is_antiderivative():
    t = np.linspace(0, 4, 9)
    ref = [integrate.quad(ringdown_profile, 0, s)[0] for s in t]
    np.testing.assert_allclose(ringdown_integral(t), ref, atol=1e-12)
    assert ringdown_profile(np.array([4.5]))[0] == 0.0


def test_rhs_shapes():
    g = TimeGrid(0.1, 5)
    r = assemble_rhs(MESH, g, PlaneWavePacket())
    assert r.samples.shape == (6, 8) and r.differenced
    assert assemble_rhs(MESH, g, RingdownG()).samples.shape == (6, 1)
    assert assemble_rhs(MESH, g, RingdownH()).samples.shape == (6, 10)
    assert not assemble_rhs(MESH, g, ZeroLoad()).samples.any()


def test_plane_wave_load_against_sampling():
    g = TimeGrid(0.1, 5)
    r = assemble_rhs(MESH, g, PlaneWavePacket())
    f = PlaneWavePacket()
    rng = np.random.default_rng(1)
    from oracles import sample_triangle

    x = sample_triangle(MESH.vertices[3], 400_000, rng)
    ref = f(0.5, x).mean() * MESH.areas[3]
    assert r.samples[5, 3] == pytest.approx(ref, rel=1e-3)


def test_non_flat_mesh_rejected():
    from tdbem.geometry import horn_surface_mesh

    with pytest.raises(ValueError):
        assemble_single_layer(horn_surface_mesh(0.3, 0.0, 6), GRID)


def test_lag_sequence_type():
    assert isinstance(assemble_single_layer(MESH, GRID), LagMatrixSequence)
