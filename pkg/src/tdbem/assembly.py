"""Lag matrices and load vectors of the marching-on-in-time systems.

Every space-time Galerkin matrix is block lower triangular Toeplitz: the block
coupling test step ``n`` with trial step ``m`` depends on the lag
``l = n - m`` only, and is a combination of integrals over the light-cone
shells ``E_k = {k dt <= |x - y| <= (k + 1) dt}``.  Per DOF pair only a
contiguous band of lags is nonzero, so matrices are stored as pair slabs: for
pair ``p`` the lag values ``lo[p] .. lo[p] + cnt[p] - 1`` sit contiguously in
``values[off[p]:off[p] + cnt[p]]``.  Symmetric operators keep pairs
``i <= j`` only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
import scipy.sparse as sp

from .geometry import Mesh, mesh_diameter
from .quadrature import (
    QuadratureRule,
    arc_length_in_triangle,
    ball_double_layer,
    disc_moments_2d,
    subdivided_rule,
    triangle_distance_bounds,
)
from .timegrid import TimeGrid

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
TWO_PI = 2.0 * math.pi

SINGLE_LAYER = "single_layer"
HYPERSINGULAR = "hypersingular"
HORN_ADJOINT_DL = "horn_adjoint_dl"
DTN = "dtn"
DTN_SINGLE_LAYER = "dtn_single_layer"

# ---------------------------------------------------------------------------
# lag matrix containers
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _slab_history(pi, pj, lo, cnt, off, vals, H, n, sym, out):
    """``out += sum_{l >= 1} A^l H[:, n - l]`` (``H`` is dof x time)."""
    for p in range(pi.shape[0]):
        i = pi[p]
        j = pj[p]
        l0 = max(lo[p], 1)
        l1 = min(lo[p] + cnt[p] - 1, n - 1)
        if l1 < l0:
            continue
        base = off[p] - lo[p]
        si = 0.0
        sj = 0.0
        for l in range(l0, l1 + 1):
            v = vals[base + l]
            si += v * H[j, n - l]
            sj += v * H[i, n - l]
        out[i] += si
        if sym and i != j:
            out[j] += sj


@nb.njit(cache=True)
def _slab_lag_entries(pi, pj, lo, cnt, off, vals, lag):
    m = 0
    for p in range(pi.shape[0]):
        if lo[p] <= lag < lo[p] + cnt[p]:
            m += 1
    rows = np.empty(m, np.int64)
    cols = np.empty(m, np.int64)
    data = np.empty(m)
    m = 0
    for p in range(pi.shape[0]):
        if lo[p] <= lag < lo[p] + cnt[p]:
            rows[m] = pi[p]
            cols[m] = pj[p]
            data[m] = vals[off[p] + lag - lo[p]]
            m += 1
    return rows, cols, data


@dataclass
class LagMatrixSequence:
    """Lag-indexed sparse matrices ``A^0, A^1, ...`` in pair-slab storage.

    ``matrices[l]`` (or :meth:`matrix`) materialises lag ``l`` as CSR.  All
    lags beyond ``lag_cutoff`` are exactly zero.  ``dof_map`` records which
    mesh entity each row/column refers to.
    """

    operator_id: str
    shape: tuple[int, int]
    lag_cutoff: int
    symmetric: bool
    pair_i: np.ndarray
    pair_j: np.ndarray
    lo: np.ndarray
    cnt: np.ndarray
    off: np.ndarray
    values: np.ndarray
    dof_map: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.shape[0]

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in (self.pair_i, self.pair_j, self.lo, self.cnt, self.off, self.values))

    def matrix(self, lag: int) -> sp.csr_matrix:
        if lag < 0 or lag > self.lag_cutoff:
            return sp.csr_matrix(self.shape)
        r, c, d = _slab_lag_entries(
            self.pair_i, self.pair_j, self.lo, self.cnt, self.off, self.values, lag
        )
        if self.symmetric:
            off_diag = r != c
            r, c, d = (
                np.concatenate([r, c[off_diag]]),
                np.concatenate([c, r[off_diag]]),
                np.concatenate([d, d[off_diag]]),
            )
        return sp.csr_matrix((d, (r, c)), shape=self.shape)

    @property
    def matrices(self) -> "_LagView":
        return _LagView(self)

    def history(self, H: np.ndarray, n: int, out: np.ndarray | None = None) -> np.ndarray:
        """``sum_{l=1}^{n-1} A^l x^{n-l}`` where column ``m`` of ``H`` is ``x^m``."""
        if out is None:
            out = np.zeros(self.shape[0])
        _slab_history(
            self.pair_i, self.pair_j, self.lo, self.cnt, self.off, self.values, H, n, self.symmetric, out
        )
        return out

    def max_abs(self, lag: int) -> float:
        m = self.matrix(lag)
        return float(abs(m).max()) if m.nnz else 0.0


class _LagView:
    def __init__(self, seq):
        self._seq = seq

    def __getitem__(self, lag: int):
        return self._seq.matrix(lag)

    def __contains__(self, lag: int) -> bool:
        return 0 <= lag <= self._seq.lag_cutoff

    def __len__(self) -> int:
        return self._seq.lag_cutoff + 1

    def __iter__(self):
        return iter(range(self._seq.lag_cutoff + 1))


@dataclass
class SparseLagSequence:
    """A few explicit lag matrices (used for mass couplings)."""

    operator_id: str
    shape: tuple[int, int]
    mats: dict
    dof_map: dict = field(default_factory=dict)

    @property
    def lag_cutoff(self) -> int:
        return max(self.mats) if self.mats else 0

    def matrix(self, lag: int) -> sp.csr_matrix:
        return self.mats.get(lag, sp.csr_matrix(self.shape))

    @property
    def matrices(self):
        return self.mats

    def history(self, H, n, out=None):
        if out is None:
            out = np.zeros(self.shape[0])
        for lag, m in self.mats.items():
            if 1 <= lag <= n - 1:
                out += m @ H[:, n - lag]
        return out


@dataclass
class BlockLagSystem:
    """2 x 2 block lag system; ``blocks[(r, c)]`` maps block column ``c`` to row ``r``."""

    operator_id: str
    blocks: dict
    sizes: tuple[int, int]
    dof_map: dict = field(default_factory=dict)

    @property
    def shape(self):
        n = sum(self.sizes)
        return (n, n)

    @property
    def lag_cutoff(self) -> int:
        return max(b.lag_cutoff for b in self.blocks.values())

    def _split(self):
        return [0, self.sizes[0], self.sizes[0] + self.sizes[1]]

    def matrix(self, lag: int) -> sp.csr_matrix:
        rows = []
        for r in range(2):
            rows.append(
                [
                    self.blocks[(r, c)].matrix(lag) if (r, c) in self.blocks else None
                    for c in range(2)
                ]
            )
        # sp.bmat needs every block row/column to have a known size
        for r in range(2):
            for c in range(2):
                if rows[r][c] is None:
                    rows[r][c] = sp.csr_matrix((self.sizes[r], self.sizes[c]))
        return sp.bmat(rows, format="csr")

    @property
    def matrices(self):
        return _LagView(self)

    def history(self, H, n, out=None):
        s = self._split()
        if out is None:
            out = np.zeros(s[2])
        for (r, c), blk in self.blocks.items():
            part = np.zeros(self.sizes[r])
            blk.history(np.ascontiguousarray(H[s[c] : s[c + 1]]), n, part)
            out[s[r] : s[r + 1]] += part
        return out


# ---------------------------------------------------------------------------
# load vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlaneWavePacket:
    """``f(t, x) = cos(|k| t - k.x) exp(-1/(10 t^2))``, Dirichlet data."""

    k: tuple = (0.2, 0.2, 0.2)

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        if t <= 0:
            return np.zeros(len(x))
        k = np.asarray(self.k, dtype=float)
        return np.cos(np.linalg.norm(k) * t - x @ k) * math.exp(-1.0 / (10.0 * t * t))


def ringdown_profile(t):
    """Time profile of the Neumann data, supported on ``[0, 4]``."""
    t = np.asarray(t, dtype=float)
    s = 4.0 - t
    g = (
        -0.75
        + np.cos(0.5 * np.pi * s)
        + 0.5 * np.pi * np.sin(0.5 * np.pi * s)
        - 0.25 * (np.cos(np.pi * s) + np.pi * np.sin(np.pi * s))
    )
    return np.where((t >= 0) & (t <= 4), g, 0.0)


def ringdown_integral(t):
    """Antiderivative of :func:`ringdown_profile` vanishing at ``t <= 0``."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 4.0)

    def F(t):
        s = 4.0 - t
        return (
            -0.75 * t
            - (2 / np.pi) * np.sin(0.5 * np.pi * s)
            + np.cos(0.5 * np.pi * s)
            + np.sin(np.pi * s) / (4 * np.pi)
            - 0.25 * np.cos(np.pi * s)
        )

    return F(t) - F(0.0)


@dataclass(frozen=True)
class RingdownG:
    """Neumann data of the hypersingular examples (space-constant)."""


@dataclass(frozen=True)
class RingdownH:
    """Data of the Dirichlet-to-Neumann example (same profile as RingdownG)."""


@dataclass(frozen=True)
class PointSourceDirac:
    """Impulsive point source above the ground plane plus its mirror image."""

    y_src: tuple = (0.08, 0.0, 0.0)


@dataclass(frozen=True)
class ZeroLoad:
    pass


@dataclass
class RhsTimeSeries:
    """Per-step load vectors.

    ``samples[n]`` for ``n = 0..n_steps``.  With ``differenced`` set, the
    marching right-hand side is ``samples[n] - samples[n - 1]`` (Dirichlet
    data tested with time-differentiated test functions); otherwise it is
    ``samples[n]`` directly.  ``samples[0]`` is zero for vanishing initial
    data.
    """

    rhs_id: object
    samples: np.ndarray
    differenced: bool = False

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0] - 1

    def load(self, n: int) -> np.ndarray:
        if self.differenced:
            return self.samples[n] - self.samples[n - 1]
        return self.samples[n]

    @property
    def vectors(self) -> np.ndarray:
        """Marching right-hand sides ``b^1..b^N`` as rows."""
        return np.array([self.load(n) for n in range(1, self.n_steps + 1)])


# ---------------------------------------------------------------------------
# helpers shared by the assemblers
# ---------------------------------------------------------------------------


def _require_flat(mesh: Mesh):
    if not mesh.is_flat:
        raise ValueError("operator requires a flat screen in a plane z = const")
    if len(mesh.triangles) == 0:
        raise ValueError("empty mesh")


def _outer_points(mesh: Mesh, grid: TimeGrid, rule: QuadratureRule):
    """Ragged composite quadrature points for every triangle."""
    verts = mesh.vertices
    diam = mesh.diameters
    offs = [0]
    xs, ws, bs = [], [], []
    for t in range(len(verts)):
        n_sub = rule.n_sub(diam[t], grid.dt)
        bary, w = subdivided_rule(rule.order, n_sub)
        xs.append(bary @ verts[t])
        ws.append(w * mesh.areas[t])
        bs.append(bary)
        offs.append(offs[-1] + len(w))
    return (
        np.asarray(offs, dtype=np.int64),
        np.vstack(xs),
        np.concatenate(ws),
        np.vstack(bs),
    )


def _linear_coefficients(tri2: np.ndarray):
    """Barycentric ``lambda_k(y) = c[k] + g[k] . y`` for (nt, 3, 2) triangles."""
    nt = tri2.shape[0]
    A = np.concatenate([tri2, np.ones((nt, 3, 1))], axis=2)
    inv = np.linalg.inv(A)  # (nt, 3 [x,y,1], 3 [k])
    c = inv[:, 2, :]
    g = np.transpose(inv[:, :2, :], (0, 2, 1))
    return np.ascontiguousarray(c), np.ascontiguousarray(g)


@nb.njit(cache=True)
def _pair_shell_ranges(verts, dt, jmax, sym, image):
    """Shell ranges ``[j0, j1]`` of every triangle pair (``j0 = -1``: none)."""
    nt = verts.shape[0]
    J0 = np.full((nt, nt), -1, np.int32)
    J1 = np.full((nt, nt), -1, np.int32)
    refl = verts.copy()
    if image:
        for t in range(nt):
            for k in range(3):
                refl[t, k, 2] = -verts[t, k, 2]
    for a in range(nt):
        b0 = a if sym else 0
        for b in range(b0, nt):
            dmin, dmax = triangle_distance_bounds(verts[a], verts[b])
            if image:
                m2, M2 = triangle_distance_bounds(verts[a], refl[b])
                dmin = min(dmin, m2)
                dmax = max(dmax, M2)
            j0 = int(math.floor(dmin / dt))
            j1 = int(math.ceil(dmax / dt)) - 1
            j1 = min(j1, jmax)
            if j0 > jmax or j1 < j0:
                continue
            J0[a, b] = j0
            J1[a, b] = j1
    return J0, J1


@nb.njit(cache=True)
def _dof_pair_layout(J0, J1, dofs, ndof, extra, lagmax, sym):
    """Lag range of every DOF pair and slab offsets.

    ``dofs[t, k]`` is the DOF of local function ``k`` of triangle ``t``
    (``-1``: none).  A triangle pair with shells ``[j0, j1]`` touches lags
    ``[j0, j1 + extra]``.
    """
    nt = J0.shape[0]
    nloc = dofs.shape[1]
    LO = np.full((ndof, ndof), 1 << 30, np.int32)
    HI = np.full((ndof, ndof), -1, np.int32)
    for a in range(nt):
        for b in range(nt):
            j0 = J0[a, b]
            if j0 < 0:
                continue
            hi = min(J1[a, b] + extra, lagmax)
            for al in range(nloc):
                p = dofs[a, al]
                if p < 0:
                    continue
                for be in range(nloc):
                    q = dofs[b, be]
                    if q < 0:
                        continue
                    i, j = p, q
                    if sym and i > j:
                        i, j = j, i
                    if j0 < LO[i, j]:
                        LO[i, j] = j0
                    if hi > HI[i, j]:
                        HI[i, j] = hi
    npair = 0
    for i in range(ndof):
        for j in range(ndof):
            if HI[i, j] >= 0 and HI[i, j] >= LO[i, j]:
                npair += 1
    PID = np.full((ndof, ndof), -1, np.int32)
    pi = np.empty(npair, np.int32)
    pj = np.empty(npair, np.int32)
    lo = np.empty(npair, np.int32)
    cnt = np.empty(npair, np.int32)
    off = np.empty(npair, np.int64)
    k = 0
    tot = 0
    for i in range(ndof):
        for j in range(ndof):
            if HI[i, j] >= 0 and HI[i, j] >= LO[i, j]:
                PID[i, j] = k
                pi[k] = i
                pj[k] = j
                lo[k] = LO[i, j]
                cnt[k] = HI[i, j] - LO[i, j] + 1
                off[k] = tot
                tot += cnt[k]
                k += 1
    return PID, pi, pj, lo, cnt, off, tot


# ---------------------------------------------------------------------------
# flat screens: compiled assembly drivers
# ---------------------------------------------------------------------------

# lag combination weights for shell k contributing to lag l = k + q
#   single layer:  raw_k at q = 0 with +1, at q = 1 with -1
#   hypersingular: first kernel term (+1, -2, +1)/dt on the n.n/r moment;
#                  second term weight Q_q(rho), rho = r - t_k, quadratic
#   DtN single layer: hat weight w_q(rho) linear


@nb.njit(cache=True)
def _hyp_weight(q, tk, dt):
    """Coefficients (c0, c1, c2) with ``Q_q(r) = c0 + c1 r + c2 r^2`` on shell k."""
    if q == 0:
        a, b, c = 0.5 * dt, -1.0, 0.5 / dt
    elif q == 1:
        a, b, c = 0.5 * dt, 1.0, -1.0 / dt
    else:
        a, b, c = 0.0, 0.0, 0.5 / dt
    return a - b * tk + c * tk * tk, b - 2.0 * c * tk, c


@nb.njit(cache=True)
def _hat_weight(q, tk, dt):
    """Coefficients (c0, c1) of ``H_{l-1} - H_l = c0 + c1 r`` on shell k."""
    if q == 0:
        a, b = -1.0, 1.0 / dt
    elif q == 1:
        a, b = 1.0, -2.0 / dt
    else:
        a, b = 0.0, 1.0 / dt
    return a - b * tk, b


@nb.njit(cache=True)
def _flat_p0_driver(tri2, qoff, qx, qw, J0, J1, dt, lagmax, PID, lo, off, vals):
    nt = tri2.shape[0]
    for a in range(nt):
        for b in range(a, nt):
            j0 = J0[a, b]
            if j0 < 0:
                continue
            j1 = J1[a, b]
            nsh = j1 - j0 + 1
            radii = (j0 + np.arange(nsh + 1)) * dt
            S = np.zeros(nsh)
            mom = np.zeros((nsh + 1, 7))
            for q in range(qoff[a], qoff[a + 1]):
                mom[:, :] = 0.0
                disc_moments_2d(qx[q, 0], qx[q, 1], tri2[b], radii, mom)
                w = qw[q]
                for k in range(nsh):
                    S[k] += w * (mom[k + 1, 0] - mom[k, 0])
            p = PID[a, b]
            base = off[p] - lo[p]
            for k in range(nsh):
                v = S[k] / (4.0 * math.pi)
                l = j0 + k
                vals[base + l] += v
                if l + 1 <= lagmax:
                    vals[base + l + 1] -= v


@nb.njit(cache=True)
def _flat_p1_driver(
    tri2, qoff, qx, qw, qb, cb, gb, dofs, J0, J1, dt, lagmax, mode, PID, lo, off, vals
):
    """Assemble P1 x P1 lag matrices (mode 0: hypersingular, 1: DtN single layer)."""
    nt = tri2.shape[0]
    X = np.zeros((3, 3))
    for a in range(nt):
        for b in range(a, nt):
            j0 = J0[a, b]
            if j0 < 0:
                continue
            j1 = J1[a, b]
            nsh = j1 - j0 + 1
            radii = (j0 + np.arange(nsh + 1)) * dt
            L0 = np.zeros((nsh, 3, 3))
            L1 = np.zeros((nsh, 3, 3))
            C = np.zeros((nsh, 3))
            mom = np.zeros((nsh + 1, 7))
            for q in range(qoff[a], qoff[a + 1]):
                mom[:, :] = 0.0
                px = qx[q, 0]
                py = qx[q, 1]
                disc_moments_2d(px, py, tri2[b], radii, mom)
                w = qw[q]
                mu = np.empty(3)
                for be in range(3):
                    mu[be] = cb[b, be] + gb[b, be, 0] * px + gb[b, be, 1] * py
                for k in range(nsh):
                    dM0 = mom[k + 1, 0] - mom[k, 0]
                    dM1 = mom[k + 1, 1] - mom[k, 1]
                    dM2 = mom[k + 1, 2] - mom[k, 2]
                    dN0x = mom[k + 1, 3] - mom[k, 3]
                    dN0y = mom[k + 1, 4] - mom[k, 4]
                    dN1x = mom[k + 1, 5] - mom[k, 5]
                    dN1y = mom[k + 1, 6] - mom[k, 6]
                    C[k, 0] += w * dM0
                    C[k, 1] += w * dM1
                    C[k, 2] += w * dM2
                    for be in range(3):
                        v0 = mu[be] * dM0 + gb[b, be, 0] * dN0x + gb[b, be, 1] * dN0y
                        v1 = mu[be] * dM1 + gb[b, be, 0] * dN1x + gb[b, be, 1] * dN1y
                        for al in range(3):
                            la = w * qb[q, al]
                            L0[k, al, be] += la * v0
                            L1[k, al, be] += la * v1
            G = np.zeros((3, 3))
            for al in range(3):
                for be in range(3):
                    G[al, be] = gb[a, al, 0] * gb[b, be, 0] + gb[a, al, 1] * gb[b, be, 1]
            for k in range(nsh):
                tk = (j0 + k) * dt
                for qq in range(3):
                    l = j0 + k + qq
                    if l > lagmax:
                        break
                    if mode == 0:
                        c0, c1, c2 = _hyp_weight(qq, tk, dt)
                        w1 = (1.0, -2.0, 1.0)[qq] / dt
                        for al in range(3):
                            for be in range(3):
                                X[al, be] = (
                                    w1 * L0[k, al, be]
                                    + G[al, be] * (c0 * C[k, 0] + c1 * C[k, 1] + c2 * C[k, 2])
                                ) / (2.0 * math.pi)
                    else:
                        c0, c1 = _hat_weight(qq, tk, dt)
                        for al in range(3):
                            for be in range(3):
                                X[al, be] = (c0 * L0[k, al, be] + c1 * L1[k, al, be]) / (
                                    4.0 * math.pi
                                )
                    for al in range(3):
                        p = dofs[a, al]
                        if p < 0:
                            continue
                        for be in range(3):
                            r = dofs[b, be]
                            if r < 0:
                                continue
                            if a == b:
                                if p < r:
                                    v = 0.5 * (X[al, be] + X[be, al])
                                elif p == r:
                                    v = X[al, be]
                                else:
                                    continue
                                pid = PID[p, r]
                            else:
                                v = X[al, be] * (2.0 if p == r else 1.0)
                                pid = PID[min(p, r), max(p, r)]
                            vals[off[pid] - lo[pid] + l] += v


def _flat_setup(mesh: Mesh, grid: TimeGrid, rule: QuadratureRule):
    _require_flat(mesh)
    verts = np.ascontiguousarray(mesh.vertices)
    tri2 = np.ascontiguousarray(verts[:, :, :2])
    qoff, qx, qw, qb = _outer_points(mesh, grid, rule)
    return verts, tri2, qoff, np.ascontiguousarray(qx[:, :2]), qw, qb


def _finish(op, shape, sym, lagmax, layout, vals, mesh, grid, rule, dof_map, extra):
    PID, pi, pj, lo, cnt, off, _ = layout
    # trim numerically empty lags is unnecessary: slabs are exact ranges
    diam = mesh_diameter(mesh)
    cutoff = min(int(math.ceil(diam / grid.dt - 1e-12 * max(1.0, diam / grid.dt))) + extra, lagmax)
    seq = LagMatrixSequence(
        operator_id=op,
        shape=shape,
        lag_cutoff=max(cutoff, 0),
        symmetric=sym,
        pair_i=pi,
        pair_j=pj,
        lo=lo,
        cnt=cnt,
        off=off,
        values=vals,
        dof_map=dof_map,
        meta={"mesh": mesh.digest(), "dt": grid.dt, "n_steps": grid.n_steps, "rule": repr(rule)},
    )
    log.info("%s: %d pairs, %.1f MB", op, len(pi), seq.nbytes / 2**20)
    return seq


def _check_budget(total_values: int, budget_mb: float | None):
    mb = total_values * 8 / 2**20
    if budget_mb is not None and mb > budget_mb:
        log.warning("lag matrix storage %.0f MB exceeds budget %.0f MB", mb, budget_mb)


def assemble_single_layer(
    mesh: Mesh, grid: TimeGrid, rule: QuadratureRule | None = None, memory_budget_mb: float | None = 4096
) -> LagMatrixSequence:
    """Single layer lag matrices, P0 in space, P0 ansatz in time.

    Lag ``l`` holds ``A^l = V_l - V_{l-1}`` with the raw shell matrices
    ``(V_k)_{ij} = 1/(4 pi) int_{E_k} psi_i(x) psi_j(y) / |x - y|``.
    """
    rule = rule or QuadratureRule()
    verts, tri2, qoff, qx, qw, _ = _flat_setup(mesh, grid, rule)
    lagmax = grid.n_steps - 1
    J0, J1 = _pair_shell_ranges(verts, grid.dt, lagmax, True, False)
    nt = len(verts)
    dofs = np.arange(nt, dtype=np.int64).reshape(-1, 1)
    layout = _dof_pair_layout(J0, J1, dofs, nt, 1, lagmax, True)
    _check_budget(layout[-1], memory_budget_mb)
    vals = np.zeros(layout[-1])
    _flat_p0_driver(tri2, qoff, qx, qw, J0, J1, grid.dt, lagmax, layout[0], layout[3], layout[5], vals)
    return _finish(
        SINGLE_LAYER, (nt, nt), True, lagmax, layout, vals, mesh, grid, rule,
        {"kind": "triangle", "entities": np.arange(nt)}, 0,
    )


def _p1_dofs(mesh: Mesh, interior_only: bool):
    nn = len(mesh.nodes)
    node_dof = np.full(nn, -1, dtype=np.int64)
    ents = mesh.interior_nodes if interior_only else np.arange(nn)
    node_dof[ents] = np.arange(len(ents))
    return node_dof[mesh.triangles], ents


def _assemble_flat_p1(mesh, grid, rule, interior_only, mode, op, memory_budget_mb):
    rule = rule or QuadratureRule()
    verts, tri2, qoff, qx, qw, qb = _flat_setup(mesh, grid, rule)
    cb, gb = _linear_coefficients(tri2)
    dofs, ents = _p1_dofs(mesh, interior_only)
    ndof = len(ents)
    lagmax = grid.n_steps - 1
    J0, J1 = _pair_shell_ranges(verts, grid.dt, lagmax, True, False)
    layout = _dof_pair_layout(J0, J1, dofs, ndof, 2, lagmax, True)
    _check_budget(layout[-1], memory_budget_mb)
    vals = np.zeros(layout[-1])
    _flat_p1_driver(
        tri2, qoff, qx, qw, qb, cb, gb, dofs, J0, J1, grid.dt, lagmax, mode,
        layout[0], layout[3], layout[5], vals,
    )
    return _finish(
        op, (ndof, ndof), True, lagmax, layout, vals, mesh, grid, rule,
        {"kind": "node", "entities": ents}, 1,
    )


def assemble_hypersingular(
    mesh: Mesh, grid: TimeGrid, rule: QuadratureRule | None = None, memory_budget_mb: float | None = 4096
) -> LagMatrixSequence:
    """Hypersingular lag matrices on interior-node hats, hat ansatz in time.

    Test functions have piecewise constant time derivative.  Both kernel
    terms (normal-normal and surface-gradient) reduce to shell moments with
    exact per-shell polynomial time weights; ``n_x . n_y = 1`` on the flat
    screen.
    """
    return _assemble_flat_p1(mesh, grid, rule, True, 0, HYPERSINGULAR, memory_budget_mb)


def p1_mass_matrix(mesh: Mesh, rows: np.ndarray, cols: np.ndarray) -> sp.csr_matrix:
    """``int xi_i eta_k`` for node hats restricted to the given node lists."""
    nn = len(mesh.nodes)
    loc = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 12.0
    tri = mesh.triangles
    r = np.repeat(tri, 3, axis=1).ravel()
    c = np.tile(tri, (1, 3)).ravel()
    d = (mesh.areas[:, None] * loc.ravel()[None, :]).ravel()
    full = sp.csr_matrix((d, (r, c)), shape=(nn, nn))
    return full[rows][:, cols].tocsr()


def assemble_dtn_blocks(
    mesh: Mesh, grid: TimeGrid, rule: QuadratureRule | None = None, memory_budget_mb: float | None = 4096
) -> BlockLagSystem:
    """Coupled lag system for the Dirichlet-to-Neumann equation on a flat screen.

    Unknowns are ``phi`` (interior hats) and ``psi`` (all node hats), both hat
    functions in time.  Block row 0 is tested with piecewise constant time
    test functions, row 1 with their time derivative.  With ``K = K' = 0``::

        [ W       +1/2 M ]      lag 0: M -> dt/4 M,  lag 1: dt/4 M
        [ -1/2 M'  V_hat ]      lag 0: -1/2 M',      lag 1: +1/2 M'
    """
    _require_flat(mesh)
    W = assemble_hypersingular(mesh, grid, rule, memory_budget_mb)
    Vh = _assemble_flat_p1(mesh, grid, rule, False, 1, DTN_SINGLE_LAYER, memory_budget_mb)
    inner = mesh.interior_nodes
    alln = np.arange(len(mesh.nodes))
    M = p1_mass_matrix(mesh, inner, alln)
    dt = grid.dt
    c01 = SparseLagSequence("dtn_coupling_phi_psi", M.shape, {0: dt / 4 * M, 1: dt / 4 * M})
    Mt = M.T.tocsr()
    c10 = SparseLagSequence("dtn_coupling_psi_phi", Mt.shape, {0: -0.5 * Mt, 1: 0.5 * Mt})
    return BlockLagSystem(
        DTN,
        {(0, 0): W, (0, 1): c01, (1, 0): c10, (1, 1): Vh},
        (len(inner), len(alln)),
        {"phi": inner, "psi": alln},
    )


# ---------------------------------------------------------------------------
# half-space adjoint double layer
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _horn_driver(verts, normals, areas, qoff, qx, qw, J0, J1, dt, lagmax, gx, gw, PID, lo, off, vals):
    nt = verts.shape[0]
    refl = verts.copy()
    for t in range(nt):
        for k in range(3):
            refl[t, k, 2] = -verts[t, k, 2]
        # keep a consistent orientation of the mirrored triangle
        tmp = refl[t, 1].copy()
        refl[t, 1] = refl[t, 2]
        refl[t, 2] = tmp
    for a in range(nt):
        for b in range(nt):
            j0 = J0[a, b]
            if j0 < 0:
                continue
            j1 = J1[a, b]
            nsh = j1 - j0 + 1
            radii = (j0 + np.arange(nsh + 1)) * dt
            P = np.zeros(nsh)
            acc = np.zeros(nsh + 1)
            for q in range(qoff[a], qoff[a + 1]):
                acc[:] = 0.0
                x = qx[q]
                if a != b:
                    ball_double_layer(x, normals[a], verts[b], radii, gx, gw, acc)
                ball_double_layer(x, normals[a], refl[b], radii, gx, gw, acc)
                w = qw[q]
                for k in range(nsh):
                    P[k] += w * (acc[k + 1] - acc[k])
            p = PID[a, b]
            base = off[p] - lo[p]
            for k in range(nsh):
                l = j0 + k
                # shell k enters lag k with t_{k+1} and lag k+1 with -t_k
                vals[base + l] += (l + 1) * dt * P[k] / (2.0 * math.pi)
                if l + 1 <= lagmax:
                    vals[base + l + 1] -= l * dt * P[k] / (2.0 * math.pi)
    for a in range(nt):
        p = PID[a, a]
        if p >= 0 and lo[p] == 0:
            vals[off[p]] -= dt * areas[a]


def assemble_adjoint_double_layer_halfspace(
    mesh: Mesh, grid: TimeGrid, rule: QuadratureRule | None = None, memory_budget_mb: float | None = 4096
) -> LagMatrixSequence:
    """Lag matrices of ``-I + K'`` with the half-space (image) kernel.

    P0 in space and time.  With ``P_k = int_{E_k} n_x.(y - x)/|x - y|^3``
    (direct plus mirrored ``y``) the lag matrices are
    ``A^l = -dt |T| delta_{l0} + (t_{l+1} P_l - t_{l-1} P_{l-1}) / (2 pi)``.
    The direct self-interaction vanishes since ``n_x . (y - x) = 0`` there;
    in-plane image pairs are taken as principal values.
    """
    rule = rule or QuadratureRule()
    if len(mesh.triangles) == 0:
        raise ValueError("empty mesh")
    verts = np.ascontiguousarray(mesh.vertices)
    qoff, qx, qw, _ = _outer_points(mesh, grid, rule)
    lagmax = grid.n_steps - 1
    J0, J1 = _pair_shell_ranges(verts, grid.dt, lagmax, False, True)
    nt = len(verts)
    # lag 0 always present on the diagonal for the identity part
    for a in range(nt):
        if J0[a, a] < 0:
            J0[a, a] = 0
            J1[a, a] = 0
    dofs = np.arange(nt, dtype=np.int64).reshape(-1, 1)
    layout = _dof_pair_layout(J0, J1, dofs, nt, 1, lagmax, False)
    _check_budget(layout[-1], memory_budget_mb)
    vals = np.zeros(layout[-1])
    gx, gw = np.polynomial.legendre.leggauss(rule.angular_points)
    _horn_driver(
        verts, np.ascontiguousarray(mesh.normals), mesh.areas, qoff, np.ascontiguousarray(qx), qw,
        J0, J1, grid.dt, lagmax, gx, gw, layout[0], layout[3], layout[5], vals,
    )
    seq = _finish(
        HORN_ADJOINT_DL, (nt, nt), False, lagmax, layout, vals, mesh, grid, rule,
        {"kind": "triangle", "entities": np.arange(nt)}, 0,
    )
    # the mirrored mesh can be farther away than diam(mesh)
    seq.lag_cutoff = int(max(seq.lag_cutoff, (seq.lo + seq.cnt - 1).max(initial=0)))
    return seq


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------


def _triangle_integrals(mesh: Mesh, func, rule: QuadratureRule, n_sub: int = 2):
    bary, w = subdivided_rule(rule.order, n_sub)
    pts = np.einsum("qk,tkd->tqd", bary, mesh.vertices)
    vals = func(pts.reshape(-1, 3)).reshape(pts.shape[:2])
    return (vals * w[None, :]).sum(axis=1) * mesh.areas


def _point_source_load(mesh: Mesh, grid: TimeGrid, y_src, rule: QuadratureRule):
    """Load of ``-2 dp^I/dn`` for an impulsive source and its mirror image.

    Per source: ``-(1/2pi) int_{T cap E_n} n.(y - x)/r^3
    + (1/2pi) n.(y - x) [Z(t_{n-1})/t_{n-1}^2 - Z(t_n)/t_n^2]`` with
    ``Z(t) = d/dt |T cap B(y, t)|`` (arc length times ``t / rho_t``).
    """
    gx, gw = np.polynomial.legendre.leggauss(rule.angular_points)
    verts = mesh.vertices
    nt = len(verts)
    N = grid.n_steps
    out = np.zeros((N + 1, nt))
    radii = grid.nodes
    for src in (np.asarray(y_src, float), np.asarray(y_src, float) * [1, 1, -1]):
        for i in range(nt):
            n = mesh.normals[i]
            hsrc = float(np.dot(src - verts[i, 0], n))  # n.(y - x) on the plane
            acc = np.zeros(N + 1)
            ball_double_layer(src, -n, np.ascontiguousarray(verts[i]), radii, gx, gw, acc)
            vol = -(acc[1:] - acc[:-1]) / TWO_PI
            Z = np.zeros(N + 1)
            for k in range(1, N + 1):
                t = radii[k]
                if t <= abs(hsrc):
                    continue
                ell = arc_length_in_triangle(verts[i], src, t)
                Z[k] = ell * t / math.sqrt(t * t - hsrc * hsrc)
            ratio = np.zeros(N + 1)
            ratio[1:] = Z[1:] / radii[1:] ** 2
            surf = hsrc * (ratio[:-1] - ratio[1:]) / TWO_PI
            out[1:, i] += vol + surf
    return out


def assemble_rhs(mesh: Mesh, grid: TimeGrid, rhs_id, rule: QuadratureRule | None = None) -> RhsTimeSeries:
    """Load vectors for the supported data (see the ``rhs_id`` classes)."""
    rule = rule or QuadratureRule()
    N = grid.n_steps
    t = grid.nodes
    if isinstance(rhs_id, ZeroLoad):
        return RhsTimeSeries(rhs_id, np.zeros((N + 1, len(mesh.triangles))), True)
    if isinstance(rhs_id, PlaneWavePacket):
        samples = np.zeros((N + 1, len(mesh.triangles)))
        for n in range(1, N + 1):
            samples[n] = _triangle_integrals(mesh, lambda x: rhs_id(t[n], x), rule)
        return RhsTimeSeries(rhs_id, samples, True)
    if isinstance(rhs_id, (RingdownG, RingdownH)):
        inner = mesh.interior_nodes
        hat_int = np.zeros(len(mesh.nodes))
        np.add.at(hat_int, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
        steps = np.diff(ringdown_integral(t))
        samples = np.zeros((N + 1, len(inner)))
        samples[1:] = steps[:, None] * hat_int[inner][None, :]
        if isinstance(rhs_id, RingdownH):
            samples = np.hstack([samples, np.zeros((N + 1, len(mesh.nodes)))])
        return RhsTimeSeries(rhs_id, samples, False)
    if isinstance(rhs_id, PointSourceDirac):
        return RhsTimeSeries(rhs_id, _point_source_load(mesh, grid, rhs_id.y_src, rule), False)
    raise ValueError(f"unknown rhs {rhs_id!r}")
