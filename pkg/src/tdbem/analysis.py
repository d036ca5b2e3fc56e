"""Error norms, rate fits, singular exponents and spectra.

Meshes of a refinement ladder are not nested, so densities are compared by
evaluating them at points of the finer mesh (point location + the
piecewise polynomial representation of each density).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, signal
from scipy.spatial import cKDTree

from .assembly import RhsTimeSeries
from .geometry import Mesh
from .mot import DensityHistory, apply_spacetime
from .potentials import FieldProbe, incident_point_source
from .quadrature import triangle_rule

P0_OPERATORS = {"single_layer", "horn_adjoint_dl"}

# ---------------------------------------------------------------------------
# point evaluation of densities
# ---------------------------------------------------------------------------


def locate_points(mesh: Mesh, points: np.ndarray, tol: float = 1e-10, snap: bool = False):
    """Triangle index and barycentric coordinates of planar points (x, y).

    Points outside the screen by less than ``tol`` (relative) are snapped
    to the closest candidate; points farther out get index ``-1``.  With
    ``snap`` set, points just outside a polygonal boundary (as when a fine
    disc mesh reaches beyond a coarse one) are projected onto the nearest
    triangle.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
    tri2 = mesh.vertices[:, :, :2]
    tree = cKDTree(mesh.centroids[:, :2])
    k = min(24, len(tri2))
    _, cand = tree.query(pts, k=k)
    cand = np.atleast_2d(cand).reshape(len(pts), -1)
    idx = np.full(len(pts), -1, dtype=np.int64)
    bary = np.zeros((len(pts), 3))

    def bc(t, p):
        a, b, c = tri2[t]
        T = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
        l1, l2 = np.linalg.solve(T, p - a)
        return np.array([1 - l1 - l2, l1, l2])

    for n, p in enumerate(pts):
        best, best_val = -1, -np.inf
        for t in cand[n]:
            lam = bc(t, p)
            if lam.min() > best_val:
                best, best_val = t, lam.min()
            if best_val >= -tol:
                break
        if best_val < -tol:
            # fall back to a full search
            for t in range(len(tri2)):
                lam = bc(t, p)
                if lam.min() > best_val:
                    best, best_val = t, lam.min()
        if best_val >= (-0.5 if snap else -1e-6):
            idx[n] = best
            lam = np.clip(bc(best, p), 0.0, None)
            bary[n] = lam / lam.sum()
    return idx, bary


def _node_values(psi: DensityHistory, mesh: Mesh) -> np.ndarray:
    """P1 coefficients expanded to all mesh nodes (boundary nodes zero)."""
    coef = psi.block("phi") if psi.blocks else psi.coefficients
    full = np.zeros((coef.shape[0], len(mesh.nodes)))
    if coef.shape[1] == len(mesh.nodes):
        full[:] = coef
    else:
        full[:, mesh.interior_nodes] = coef
    return full


def is_p0(psi: DensityHistory) -> bool:
    return psi.basis == "p0" or psi.operator_id in P0_OPERATORS


def evaluate_density(psi: DensityHistory, mesh: Mesh, points, snap: bool = False) -> np.ndarray:
    """Density values ``(n_steps + 1, n_points)`` at planar points."""
    idx, bary = locate_points(mesh, points, snap=snap)
    if (idx < 0).any():
        raise ValueError("points outside the screen")
    if is_p0(psi):
        return psi.coefficients[:, idx]
    nodal = _node_values(psi, mesh)
    tri = mesh.triangles[idx]
    return np.einsum("tpk,pk->tp", nodal[:, tri], bary)


def _same_screen(ma: Mesh, mb: Mesh):
    if ma.kind != mb.kind:
        raise ValueError("densities live on different screens")
    # polygonal discs of different resolution differ slightly in extent
    ba = np.ptp(ma.nodes, axis=0)
    bb = np.ptp(mb.nodes, axis=0)
    if not np.allclose(ba, bb, atol=0.05 * ba.max()):
        raise ValueError("densities live on different screens")


def l2_spacetime_error(a, b, T: float | None = None, order: int = 7) -> float:
    """``L2([0, T] x screen)`` norm of the difference of two densities.

    ``a`` and ``b`` are ``(DensityHistory, Mesh)`` pairs on the same time
    grid.  Space: quadrature points of the finer mesh; time: midpoint rule
    (exact for piecewise constant densities).
    """
    (pa, ma), (pb, mb) = a, b
    _same_screen(ma, mb)
    if not math.isclose(pa.dt, pb.dt, rel_tol=1e-12):
        raise ValueError("densities use different time steps")
    fine = ma if len(ma.triangles) >= len(mb.triangles) else mb
    bary, w = triangle_rule(order)
    pts = np.einsum("qk,tkd->tqd", bary, fine.vertices).reshape(-1, 3)
    wts = (w[None, :] * fine.areas[:, None]).ravel()
    n_max = min(pa.n_steps, pb.n_steps)
    if T is not None:
        n_max = min(n_max, int(round(T / pa.dt)))
    ea = evaluate_density(pa, ma, pts, snap=True)
    eb = evaluate_density(pb, mb, pts, snap=True)

    def mid(psi, vals):
        if is_p0(psi):
            return vals[1 : n_max + 1]
        return 0.5 * (vals[: n_max] + vals[1 : n_max + 1])

    diff = mid(pa, ea) - mid(pb, eb)
    return float(math.sqrt(pa.dt * np.sum(diff**2 * wts[None, :])))


def lift_density(psi: DensityHistory, mesh: Mesh, target: Mesh, order: int = 7) -> np.ndarray:
    """Coefficients of a coarse density on a finer mesh.

    P0: average of the coarse density over the quadrature points of each fine
    triangle.  P1: nodal interpolation at the fine DOF nodes.
    """
    if is_p0(psi):
        bary, w = triangle_rule(order)
        pts = np.einsum("qk,tkd->tqd", bary, target.vertices)
        vals = evaluate_density(psi, mesh, pts.reshape(-1, 3), snap=True)
        return (vals.reshape(vals.shape[0], len(target.triangles), -1) * w).sum(axis=2)
    vals = evaluate_density(psi, mesh, target.nodes, snap=True)
    n_dof = psi.block("phi").shape[1] if psi.blocks else psi.coefficients.shape[1]
    if n_dof == len(mesh.nodes):
        return vals
    return vals[:, target.interior_nodes]


def energy_error(system_fine, psi_coarse, psi_fine, rhs: RhsTimeSeries) -> float:
    """``sqrt|E(lifted coarse) - E(fine)|`` with the benchmark system.

    ``psi_coarse`` and ``psi_fine`` are ``(DensityHistory, Mesh)`` pairs (a
    bare history is accepted when it already lives on the fine mesh).  With
    ``d = x_c - x_f`` the difference of the quadratic functional is
    ``1/2 d^T A d + d^T (A x_f - b)``; both terms are evaluated directly,
    which avoids cancellation between two nearly equal energies.
    """
    pf, mf = psi_fine if isinstance(psi_fine, tuple) else (psi_fine, None)
    if isinstance(psi_coarse, tuple):
        pc, mc = psi_coarse
        Xc = lift_density(pc, mc, mf) if mc is not mf else pc.coefficients
    else:
        Xc = psi_coarse.coefficients
    Xf = pf.coefficients
    n = min(Xc.shape[0], Xf.shape[0], rhs.n_steps + 1)
    Xc, Xf = Xc[:n], Xf[:n]
    D = Xc - Xf
    B = np.zeros_like(Xf)
    for k in range(1, n):
        B[k] = rhs.load(k)
    dE = 0.5 * np.sum(D * apply_spacetime(system_fine, D)) + np.sum(
        D * (apply_spacetime(system_fine, Xf) - B)
    )
    return float(math.sqrt(abs(dE)))


# ---------------------------------------------------------------------------
# rate and exponent fits
# ---------------------------------------------------------------------------


def fit_convergence_rate(rows) -> float:
    """Least-squares slope of ``log(error)`` against ``log(dof)``."""
    rows = list(rows)
    if len(rows) < 2:
        raise ValueError("need at least two (dof, error) rows")
    dof = np.array([r[0] for r in rows], dtype=float)
    err = np.array([r[1] for r in rows], dtype=float)
    if (err <= 0).any() or (dof <= 0).any():
        raise ValueError("errors and dof counts must be positive")
    slope, _ = np.polyfit(np.log(dof), np.log(err), 1)
    return float(slope)


@dataclass
class ExponentFit:
    time: float
    section: str
    exponent: float
    window: tuple
    r_squared: float
    n_points: int
    distances: list = field(default_factory=list)
    values: list = field(default_factory=list)


SECTIONS = {
    # start, end (singular point), distance function of the sample point
    "edge_y0": ((0.0, 0.0), (1.0, 0.0)),
    "corner_diag": ((0.0, 0.0), (1.0, 1.0)),
}


def _section_geometry(section: str, mesh: Mesh):
    if section.startswith("edge_x="):
        c = float(section.split("=", 1)[1])
        start, end = (c, 0.0), (c, 1.0)
    else:
        start, end = SECTIONS[section]
    start, end = np.array(start), np.array(end)
    if mesh.kind.value == "disc":
        dist = lambda p: 1.0 - np.linalg.norm(p, axis=1)
    elif section == "corner_diag":
        dist = lambda p: np.linalg.norm(p - end, axis=1)
    elif section.startswith("edge_x="):
        dist = lambda p: 1.0 - p[:, 1]
    else:
        dist = lambda p: 1.0 - p[:, 0]
    return start, end, dist


def section_samples(mesh: Mesh, section: str):
    """Midpoints of the pieces of the section line inside each triangle."""
    start, end, dist = _section_geometry(section, mesh)
    d = end - start
    cuts = [0.0, 1.0]
    tri2 = mesh.vertices[:, :, :2]
    for e in range(3):
        a = tri2[:, e]
        b = tri2[:, (e + 1) % 3]
        eb = b - a
        den = d[0] * eb[:, 1] - d[1] * eb[:, 0]
        ok = np.abs(den) > 1e-14
        w = a - start
        s = (w[:, 0] * eb[:, 1] - w[:, 1] * eb[:, 0])[ok] / den[ok]
        u = (w[:, 0] * d[1] - w[:, 1] * d[0])[ok] / den[ok]
        good = (u >= -1e-12) & (u <= 1 + 1e-12) & (s > 0) & (s < 1)
        cuts.extend(s[good])
    cuts = np.unique(np.round(np.array(cuts), 13))
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    pts = start[None, :] + mids[:, None] * d[None, :]
    pts3 = np.column_stack([pts, np.full(len(pts), mesh.nodes[0, 2])])
    return pts3, dist(pts)


def fit_singular_exponent(
    psi: DensityHistory, mesh: Mesh, section: str, time: float, max_distance: float = 0.3
) -> ExponentFit:
    """Slope of ``log|density|`` versus ``log(distance)`` near an edge or corner.

    The two samples nearest the singular point are excluded (mesh resolution
    floor), as are distances beyond ``max_distance``.
    """
    pts, dist = section_samples(mesh, section)
    n = int(round(time / psi.dt))
    vals = evaluate_density(psi, mesh, pts)[n]
    order = np.argsort(dist)
    dist, vals = dist[order], vals[order]
    keep = np.arange(len(dist)) >= 2
    keep &= (dist <= max_distance) & (dist > 0) & (np.abs(vals) > 0)
    if keep.sum() < 4:
        raise ValueError(f"only {int(keep.sum())} samples in the fit window")
    x = np.log(dist[keep])
    y = np.log(np.abs(vals[keep]))
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return ExponentFit(
        time, section, float(slope), (float(dist[keep][0]), float(dist[keep][-1])), float(r2),
        int(keep.sum()), dist[keep].tolist(), vals[keep].tolist(),
    )


def fit_power_exponent(distances, values) -> float:
    """Slope of ``log|values|`` versus ``log(distances)``."""
    x = np.log(np.asarray(distances, dtype=float))
    y = np.log(np.abs(np.asarray(values, dtype=float)))
    if len(x) < 4:
        raise ValueError("need at least 4 samples")
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class StudyReport:
    study_id: str
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def fit(self, error_key: str, group: str | None = None, group_key: str = "series") -> float:
        rows = [r for r in self.rows if group is None or r.get(group_key) == group]
        if len(rows) < 3:
            raise ValueError("slopes need at least three refinement levels")
        slope = fit_convergence_rate([(r["dof"], r[error_key]) for r in rows])
        self.slopes[f"{group or 'all'}:{error_key}"] = slope
        return slope

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def to_csv(self, path) -> None:
        keys = sorted({k for r in self.rows for k in r})
        with open(path, "w", newline="") as fh:
            fh.write(f"# study={self.study_id} config_hash={self.config.get('config_hash', '')}\n")
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _jsonable(r.get(k, "")) for k in keys})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# interpolation of singular functions on graded 1D meshes
# ---------------------------------------------------------------------------


def graded_interpolation_error(a: float, beta: float, n: int) -> float:
    """``L2(0, 1)`` error of the piecewise linear interpolant of ``y**a``."""
    x = (np.arange(n + 1) / n) ** beta
    g, gw = np.polynomial.legendre.leggauss(20)
    total = 0.0
    f = lambda y: y**a
    for k in range(len(x) - 1):
        lo, hi = x[k], x[k + 1]
        lin = lambda y: f(lo) + (f(hi) - f(lo)) * (y - lo) / (hi - lo)
        if k == 0:
            val, _ = integrate.quad(lambda y: (f(y) - lin(y)) ** 2, lo, hi, limit=200)
        else:
            y = 0.5 * (hi - lo) * g + 0.5 * (hi + lo)
            val = 0.5 * (hi - lo) * np.sum(gw * (f(y) - lin(y)) ** 2)
        total += val
    return math.sqrt(total)


def interpolation_lemma_study(a: float, beta: float, levels=(8, 16, 32, 64)) -> StudyReport:
    """Empirical interpolation rate of ``y**a`` versus ``h = 1/n`` on graded meshes.

    The predicted rate is ``min(beta (a + 1/2), 2)``.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    rep = StudyReport("interp", config={"a": a, "beta": beta, "levels": list(levels)})
    for n in levels:
        rep.rows.append({"n": n, "h": 1.0 / n, "error": graded_interpolation_error(a, beta, n)})
    h = np.array([r["h"] for r in rep.rows])
    e = np.array([r["error"] for r in rep.rows])
    rep.slopes["rate"] = float(np.polyfit(np.log(h), np.log(e), 1)[0])
    rep.slopes["predicted"] = min(beta * (a + 0.5), 2.0)
    return rep


# ---------------------------------------------------------------------------
# horn spectrum
# ---------------------------------------------------------------------------


def amplification_spectrum(
    scattered: FieldProbe,
    y_src,
    x_fp,
    dt: float,
    band_hz=(200.0, 2000.0),
    speed_of_sound: float = 343.0,
    length_scale: float = 1.0,
):
    """Horn amplification ``20 log10(|p + p_I| / |p_I|)`` over a frequency band.

    The scattered series (rectangular window, zero padded to the next power
    of two) is transformed with ``hat p(w) = dt sum_n p(t_n) exp(-i w t_n)``.
    Dimensionless angular frequencies ``w`` map to Hertz via
    ``f = w c / (2 pi L)``.  Returns ``(w, f_hz, dL)``.
    """
    p = np.asarray(scattered.values if scattered.values.ndim == 1 else scattered.values[:, 0], float)
    times = scattered.times if scattered.times is not None else np.arange(len(p)) * dt
    M = 1 << int(math.ceil(math.log2(max(len(p), 2))))
    spec = dt * np.fft.rfft(p, M) * np.exp(-1j * 2 * np.pi * np.fft.rfftfreq(M, dt) * times[0])
    w = 2 * np.pi * np.fft.rfftfreq(M, dt)
    f_hz = w * speed_of_sound / (2 * np.pi * length_scale)
    sel = (f_hz >= band_hz[0]) & (f_hz <= band_hz[1])
    inc = incident_point_source(y_src, np.atleast_2d(x_fp), w[sel]).values[:, 0]
    dL = 20.0 * np.log10(np.abs(spec[sel] + inc) / np.abs(inc))
    return w[sel], f_hz[sel], dL


def peak_band_contrast(reference_db: np.ndarray, other_db: np.ndarray, half_width: int = 2, prominence: float = 1.0):
    """Mean |difference| near peaks of ``reference_db`` over the mean elsewhere.

    Peaks are local maxima with the given prominence (dB); the peak band
    holds ``half_width`` bins on either side of each peak.
    """
    peaks, _ = signal.find_peaks(reference_db, prominence=prominence)
    band = np.zeros(len(reference_db), dtype=bool)
    for p in peaks:
        band[max(0, p - half_width) : p + half_width + 1] = True
    diff = np.abs(np.asarray(other_db) - np.asarray(reference_db))
    if not band.any() or band.all():
        return float("nan"), peaks
    off = diff[~band].mean()
    return float(diff[band].mean() / off) if off > 0 else float("inf"), peaks
