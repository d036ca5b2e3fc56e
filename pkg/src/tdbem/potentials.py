"""Retarded potentials away from the screen and the incident point source.

For a density that is piecewise constant in space and time the single layer
potential is a finite sum of ball integrals: with ``F_i(x, R)`` the integral
of ``1/|x - y|`` over ``T_i cap B(x, R)``,

    u(t, x) = 1/(4 pi) sum_{i, n} psi_i^n [F_i(x, t - t_{n-1}) - F_i(x, t - t_n)],

which is evaluated exactly (no quadrature in ``y``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Mesh
from .mot import DensityHistory
from .quadrature import QuadratureRule, ball_inverse_distance


@dataclass
class FieldProbe:
    """Field samples ``values[k, p]`` at ``times[k]`` (or ``frequencies[k]``) and ``points[p]``."""

    points: np.ndarray
    values: np.ndarray
    times: np.ndarray | None = None
    frequencies: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def series(self, p: int = 0) -> np.ndarray:
        return self.values[:, p]


def _ball_table(x: np.ndarray, verts: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """``F[i, k] = int_{T_i cap B(x, radii[k])} 1/|x - y|``."""
    out = np.zeros((len(verts), len(radii)))
    pos = np.maximum(radii, 0.0)
    for i in range(len(verts)):
        ball_inverse_distance(x, verts[i], pos, out[i])
    return out


def _single_layer_series(coef: np.ndarray, dt: float, verts: np.ndarray, x: np.ndarray, times):
    N = coef.shape[0] - 1
    tn = np.arange(N + 1) * dt
    vals = np.empty(len(times))
    for k, t in enumerate(times):
        F = _ball_table(x, verts, t - tn)  # column n: radius t - t_n
        # psi^n lives on [t_{n-1}, t_n): radii between t - t_n and t - t_{n-1}
        diff = F[:, :-1] - F[:, 1:]
        vals[k] = np.sum(coef[1:].T * diff) / (4.0 * np.pi)
    return vals


def evaluate_single_layer(
    psi: DensityHistory, mesh: Mesh, points, times, rule: QuadratureRule | None = None
) -> FieldProbe:
    """Single layer potential of a P0 space-time density at off-screen points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    verts = np.ascontiguousarray(mesh.vertices)
    vals = np.column_stack(
        [_single_layer_series(psi.coefficients, psi.dt, verts, p, times) for p in pts]
    )
    return FieldProbe(pts, vals, times=times, meta={"operator": "single_layer"})


def evaluate_halfspace_pressure(
    phi: DensityHistory, mesh: Mesh, points, times, rule: QuadratureRule | None = None
) -> FieldProbe:
    """Pressure of the half-space single layer ansatz (direct plus mirrored screen)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    verts = np.ascontiguousarray(mesh.vertices)
    image = np.ascontiguousarray(mesh.reflected().vertices)
    vals = np.column_stack(
        [
            _single_layer_series(phi.coefficients, phi.dt, verts, p, times)
            + _single_layer_series(phi.coefficients, phi.dt, image, p, times)
            for p in pts
        ]
    )
    return FieldProbe(pts, vals, times=times, meta={"operator": "halfspace_pressure"})


def incident_point_source(y_src, points, frequencies) -> FieldProbe:
    """Spectrum of the impulsive source and its mirror image.

    With the forward transform ``hat p(w) = int p(t) exp(-i w t) dt`` the
    pulse ``delta(t - r)/(4 pi r)`` becomes ``exp(-i w r)/(4 pi r)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.atleast_1d(np.asarray(frequencies, dtype=float))
    src = np.asarray(y_src, dtype=float)
    vals = np.zeros((len(w), len(pts)), dtype=complex)
    for s in (src, src * np.array([1.0, 1.0, -1.0])):
        r = np.linalg.norm(pts - s, axis=1)
        vals += np.exp(-1j * np.outer(w, r)) / (4.0 * np.pi * r[None, :])
    return FieldProbe(pts, vals, frequencies=w, meta={"operator": "incident_point_source"})
