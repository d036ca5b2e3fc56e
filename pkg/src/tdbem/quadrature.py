"""Integration of retarded kernels over light-cone shells.

Assembly needs double integrals over triangle pairs restricted to the shell
``r_lo <= |x - y| <= r_hi``.  The inner integral over ``y`` is evaluated in
polar coordinates centred at (the projection of) ``x``: every triangle is a
signed sum of three fan triangles with apex ``x``, and on each fan the radial
integral of the kernel is available in closed form.  Clipping the fan to a
ball of radius ``R`` only changes the angular limits, so

    B(x, R) = integral over T cap {|x - y| <= R}

is an explicit function of ``R``.  Shell integrals are differences
``B(x, r_hi) - B(x, r_lo)``; summing consecutive shells therefore telescopes
exactly.  The outer integral over ``x`` uses a composite symmetric rule.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np

# ---------------------------------------------------------------------------
# reference rules
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _dunavant7():
    s = math.sqrt(15.0)
    a1, b1 = (9 - 2 * s) / 21, (6 + s) / 21
    a2, b2 = (9 + 2 * s) / 21, (6 - s) / 21
    w1, w2 = (155 + s) / 1200, (155 - s) / 1200
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9 / 40]
    for a, b, w in ((a1, b1, w1), (a2, b2, w2)):
        pts += [(a, b, b), (b, a, b), (b, b, a)]
        wts += [w, w, w]
    return np.array(pts), np.array(wts)


@lru_cache(maxsize=None)
def collapsed_gauss(n: int):
    """Conical product Gauss rule with ``n * n`` nodes (barycentric, weights sum to 1)."""
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(g, g, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    x = u.ravel()
    y = (v * (1.0 - u)).ravel()
    wt = (wu * wv * (1.0 - u)).ravel() * 2.0
    return np.column_stack([1.0 - x - y, x, y]), wt


def triangle_rule(order: int = 7):
    """Reference rule as (barycentric points, weights summing to one).

    ``order = 1`` is the centroid rule, ``7`` the degree-5 symmetric rule and
    any perfect square ``n*n > 9`` a conical Gauss product rule.
    """
    if order == 1:
        return np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])
    if order == 7:
        return _dunavant7()
    n = int(round(math.sqrt(order)))
    if n * n != order:
        raise ValueError(f"unsupported triangle rule size {order}")
    return collapsed_gauss(n)


@lru_cache(maxsize=None)
def subdivided_rule(order: int, n_sub: int):
    """Composite rule on the reference triangle cut into ``n_sub**2`` copies."""
    pts, wts = triangle_rule(order)
    corners = []
    for i in range(n_sub):
        for j in range(n_sub - i):
            a = np.array([i, j]) / n_sub
            b = np.array([i + 1, j]) / n_sub
            c = np.array([i, j + 1]) / n_sub
            corners.append((a, b, c))
            if j < n_sub - i - 1:
                d = np.array([i + 1, j + 1]) / n_sub
                corners.append((b, d, c))
    out_p, out_w = [], []
    for a, b, c in corners:
        # local (xi, eta) of every point
        loc = pts[:, 0:1] * a + pts[:, 1:2] * b + pts[:, 2:3] * c
        out_p.append(np.column_stack([1 - loc[:, 0] - loc[:, 1], loc]))
        out_w.append(wts / n_sub**2)
    return np.vstack(out_p), np.concatenate(out_w)


@dataclass(frozen=True)
class QuadratureRule:
    """Outer quadrature settings.

    ``order`` selects the base rule, ``depth`` the minimum number of uniform
    subdivisions per triangle side (``2**depth``), and ``shell_resolution``
    additionally refines until sub-triangle diameters do not exceed
    ``shell_resolution * dt``.  ``max_sub`` caps the refinement.
    """

    order: int = 7
    depth: int = 0
    shell_resolution: float = 40.0
    max_sub: int = 8
    angular_points: int = 12

    def n_sub(self, diameter: float, dt: float | None = None) -> int:
        n = 2**self.depth
        if dt is not None and self.shell_resolution > 0:
            n = max(n, int(math.ceil(diameter / (self.shell_resolution * dt))))
        return int(min(max(n, 1), max(self.max_sub, 2**self.depth)))

    def points(self, vertices: np.ndarray, n_sub: int = 1):
        """Physical points, weights (sum = area) and barycentrics on a triangle."""
        bary, w = subdivided_rule(self.order, n_sub)
        v = np.asarray(vertices, dtype=float)
        area = 0.5 * np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0]))
        return bary @ v, w * area, bary


class KernelId(str, enum.Enum):
    INV_DISTANCE = "inv_distance"
    NORMAL_DOT_INV_DISTANCE = "normal_dot_inv_distance"
    GRADGRAD_INV_DISTANCE = "gradgrad_inv_distance"
    HALFSPACE_ADJOINT_DL = "halfspace_adjoint_dl"


@dataclass(frozen=True)
class ShellSpec:
    r_lo: float
    r_hi: float

    def __post_init__(self):
        if not (0.0 <= self.r_lo < self.r_hi):
            raise ValueError("shell needs 0 <= r_lo < r_hi")


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

_NMOM = 7  # M0, M1, M2, N0x, N0y, N1x, N1y


@nb.njit(cache=True)
def _sector_add(out, k, R, s1, s2, d, nx, ny, tx, ty, sgn):
    r1 = math.sqrt(s1 * s1 + d * d)
    r2 = math.sqrt(s2 * s2 + d * d)
    dphi = math.atan2(s2, d) - math.atan2(s1, d)
    out[k, 0] += sgn * R * dphi
    out[k, 1] += sgn * 0.5 * R * R * dphi
    out[k, 2] += sgn * R * R * R * dphi / 3.0
    # integral of the unit direction over the sector
    dsin = s2 / r2 - s1 / r1
    dcos = d / r2 - d / r1
    ex = nx * dsin - tx * dcos
    ey = ny * dsin - ty * dcos
    c0 = sgn * 0.5 * R * R
    c1 = sgn * R * R * R / 3.0
    out[k, 3] += c0 * ex
    out[k, 4] += c0 * ey
    out[k, 5] += c1 * ex
    out[k, 6] += c1 * ey


@nb.njit(cache=True)
def _ray_add(out, k, s1, s2, d, nx, ny, tx, ty, sgn):
    r1 = math.sqrt(s1 * s1 + d * d)
    r2 = math.sqrt(s2 * s2 + d * d)
    a1 = math.asinh(s1 / d)
    a2 = math.asinh(s2 / d)
    out[k, 0] += sgn * d * (a2 - a1)
    out[k, 1] += sgn * 0.5 * d * (s2 - s1)
    out[k, 2] += sgn * d / 3.0 * (0.5 * (s2 * r2 - s1 * r1) + 0.5 * d * d * (a2 - a1))
    # d/2 [d n asinh(s/d) + t rho]
    c0 = sgn * 0.5 * d
    out[k, 3] += c0 * (d * nx * (a2 - a1) + tx * (r2 - r1))
    out[k, 4] += c0 * (d * ny * (a2 - a1) + ty * (r2 - r1))
    # d/3 [d n s + t s^2/2]
    c1 = sgn * d / 3.0
    out[k, 5] += c1 * (d * nx * (s2 - s1) + 0.5 * tx * (s2 * s2 - s1 * s1))
    out[k, 6] += c1 * (d * ny * (s2 - s1) + 0.5 * ty * (s2 * s2 - s1 * s1))


@nb.njit(cache=True)
def disc_moments_2d(px, py, tri, radii, out):
    """Accumulate planar moments of ``T cap B(p, R)`` into ``out[k, :]``.

    Components: ``M0 = int 1/rho``, ``M1 = int 1``, ``M2 = int rho``,
    ``N0 = int (y - p)/rho``, ``N1 = int (y - p)``.  ``tri`` is (3, 2).
    """
    area2 = (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) - (tri[1, 1] - tri[0, 1]) * (
        tri[2, 0] - tri[0, 0]
    )
    orient = 1.0 if area2 > 0 else -1.0
    scale = math.sqrt(abs(area2))
    nr = radii.shape[0]
    for e in range(3):
        ax, ay = tri[e, 0], tri[e, 1]
        bx, by = tri[(e + 1) % 3, 0], tri[(e + 1) % 3, 1]
        cr = (ax - px) * (by - py) - (ay - py) * (bx - px)
        L = math.hypot(bx - ax, by - ay)
        d = abs(cr) / L
        if d <= 1e-13 * scale:
            continue
        sgn = orient * (1.0 if cr > 0 else -1.0)
        tx, ty = (bx - ax) / L, (by - ay) / L
        proj = (px - ax) * tx + (py - ay) * ty
        fx, fy = ax + proj * tx, ay + proj * ty
        nx, ny = (fx - px) / d, (fy - py) / d
        sa, sb = -proj, L - proj
        for k in range(nr):
            R = radii[k]
            if R <= 0.0:
                continue
            if R <= d:
                _sector_add(out, k, R, sa, sb, d, nx, ny, tx, ty, sgn)
                continue
            sc = math.sqrt(R * R - d * d)
            if sa < -sc:
                _sector_add(out, k, R, sa, min(sb, -sc), d, nx, ny, tx, ty, sgn)
            lo, hi = max(sa, -sc), min(sb, sc)
            if hi > lo:
                _ray_add(out, k, lo, hi, d, nx, ny, tx, ty, sgn)
            if sb > sc:
                _sector_add(out, k, R, max(sa, sc), sb, d, nx, ny, tx, ty, sgn)


@nb.njit(cache=True)
def _plane_frame(tri):
    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    n = np.cross(e1, e2)
    area2 = math.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2)
    n = n / area2
    u = e1 / math.sqrt(e1[0] ** 2 + e1[1] ** 2 + e1[2] ** 2)
    v = np.cross(n, u)
    return n, u, v, area2


@nb.njit(cache=True)
def ball_inverse_distance(x, tri, radii, out):
    """Accumulate ``int_{T cap B(x,R)} 1/|x - y| dy`` for every radius (3D)."""
    n, u, v, area2 = _plane_frame(tri)
    rel = x - tri[0]
    h = rel[0] * n[0] + rel[1] * n[1] + rel[2] * n[2]
    ah = abs(h)
    px = rel[0] * u[0] + rel[1] * u[1] + rel[2] * u[2]
    py = rel[0] * v[0] + rel[1] * v[1] + rel[2] * v[2]
    t2 = np.zeros((3, 2))
    for i in range(3):
        w = tri[i] - tri[0]
        t2[i, 0] = w[0] * u[0] + w[1] * u[1] + w[2] * u[2]
        t2[i, 1] = w[0] * v[0] + w[1] * v[1] + w[2] * v[2]
    scale = math.sqrt(area2)
    nr = radii.shape[0]
    for e in range(3):
        ax, ay = t2[e, 0], t2[e, 1]
        bx, by = t2[(e + 1) % 3, 0], t2[(e + 1) % 3, 1]
        cr = (ax - px) * (by - py) - (ay - py) * (bx - px)
        L = math.hypot(bx - ax, by - ay)
        d = abs(cr) / L
        if d <= 1e-13 * scale:
            continue
        sgn = 1.0 if cr > 0 else -1.0  # frame built from tri: orientation +1
        tx, ty = (bx - ax) / L, (by - ay) / L
        proj = (px - ax) * tx + (py - ay) * ty
        sa, sb = -proj, L - proj
        q = math.sqrt(d * d + h * h)
        for k in range(nr):
            R = radii[k]
            if R <= ah:
                continue
            rr = math.sqrt(R * R - h * h)
            if rr <= d:
                out[k] += sgn * (R - ah) * (math.atan2(sb, d) - math.atan2(sa, d))
                continue
            sc = math.sqrt(rr * rr - d * d)
            if sa < -sc:
                out[k] += sgn * (R - ah) * (math.atan2(min(sb, -sc), d) - math.atan2(sa, d))
            lo, hi = max(sa, -sc), min(sb, sc)
            if hi > lo:
                val = 0.0
                for s, f in ((hi, 1.0), (lo, -1.0)):
                    re = math.sqrt(q * q + s * s)
                    term = d * math.asinh(s / q) - ah * math.atan2(s, d)
                    if ah > 0.0:
                        term += ah * math.atan2(s * ah, d * re)
                    val += f * term
                out[k] += sgn * val
            if sb > sc:
                out[k] += sgn * (R - ah) * (math.atan2(sb, d) - math.atan2(max(sa, sc), d))


@nb.njit(cache=True)
def ball_double_layer(x, nxv, tri, radii, gx, gw, out):
    """Accumulate ``int_{T cap B(x,R)} n_x . (y - x) / |x - y|^3 dy``.

    ``gx, gw`` is a Gauss-Legendre rule on [-1, 1] used for the angular part
    of the unclipped fan pieces.
    """
    n, u, v, area2 = _plane_frame(tri)
    rel = x - tri[0]
    h = rel[0] * n[0] + rel[1] * n[1] + rel[2] * n[2]
    scale = math.sqrt(area2)
    in_plane = abs(h) < 1e-12 * scale
    if in_plane:
        h = 1e-12 * scale if h >= 0 else -1e-12 * scale
    ah = abs(h)
    c = nxv[0] * n[0] + nxv[1] * n[1] + nxv[2] * n[2]
    if in_plane:
        # principal value: the normal part h/r^3 vanishes in the plane
        c = 0.0
    # in-plane part of n_x
    mx = nxv[0] * u[0] + nxv[1] * u[1] + nxv[2] * u[2]
    my = nxv[0] * v[0] + nxv[1] * v[1] + nxv[2] * v[2]
    px = rel[0] * u[0] + rel[1] * u[1] + rel[2] * u[2]
    py = rel[0] * v[0] + rel[1] * v[1] + rel[2] * v[2]
    t2 = np.zeros((3, 2))
    for i in range(3):
        w = tri[i] - tri[0]
        t2[i, 0] = w[0] * u[0] + w[1] * u[1] + w[2] * u[2]
        t2[i, 1] = w[0] * v[0] + w[1] * v[1] + w[2] * v[2]
    sh = 1.0 if h > 0 else -1.0
    ng = gx.shape[0]
    nr = radii.shape[0]
    for e in range(3):
        ax, ay = t2[e, 0], t2[e, 1]
        bx, by = t2[(e + 1) % 3, 0], t2[(e + 1) % 3, 1]
        cr = (ax - px) * (by - py) - (ay - py) * (bx - px)
        L = math.hypot(bx - ax, by - ay)
        d = abs(cr) / L
        if d <= 1e-13 * scale:
            continue
        sgn = 1.0 if cr > 0 else -1.0
        tx, ty = (bx - ax) / L, (by - ay) / L
        proj = (px - ax) * tx + (py - ay) * ty
        fx, fy = ax + proj * tx, ay + proj * ty
        nnx, nny = (fx - px) / d, (fy - py) / d
        mn = mx * nnx + my * nny  # n_x . e = mn cos(phi) + mt sin(phi)
        mt = mx * tx + my * ty
        sa, sb = -proj, L - proj
        q = math.sqrt(d * d + h * h)
        for k in range(nr):
            R = radii[k]
            if R <= ah:
                continue
            rr = math.sqrt(R * R - h * h)
            # clipped radial value of the in-plane part
            fc = math.asinh(rr / ah) - rr / R
            if rr <= d:
                p1, p2 = math.atan2(sa, d), math.atan2(sb, d)
                val = fc * (mn * (math.sin(p2) - math.sin(p1)) - mt * (math.cos(p2) - math.cos(p1)))
                val += sh * c * (ah / R - 1.0) * (p2 - p1)
                out[k] += sgn * val
                continue
            sc = math.sqrt(rr * rr - d * d)
            val = 0.0
            for (s1, s2, clipped) in (
                (sa, min(sb, -sc), True),
                (max(sa, -sc), min(sb, sc), False),
                (max(sa, sc), sb, True),
            ):
                if s2 <= s1:
                    continue
                p1, p2 = math.atan2(s1, d), math.atan2(s2, d)
                if clipped:
                    val += fc * (mn * (math.sin(p2) - math.sin(p1)) - mt * (math.cos(p2) - math.cos(p1)))
                    val += sh * c * (ah / R - 1.0) * (p2 - p1)
                else:
                    # solid-angle part in closed form
                    for s, f in ((s2, 1.0), (s1, -1.0)):
                        re = math.sqrt(q * q + s * s)
                        val += f * sh * c * (math.atan2(s * ah, d * re) - math.atan2(s, d))
                    half = 0.5 * (p2 - p1)
                    mid = 0.5 * (p2 + p1)
                    acc = 0.0
                    for g in range(ng):
                        ph = mid + half * gx[g]
                        cp = math.cos(ph)
                        rho = d / cp
                        re = math.sqrt(rho * rho + h * h)
                        acc += gw[g] * (mn * cp + mt * math.sin(ph)) * (math.asinh(rho / ah) - rho / re)
                    val += half * acc
            out[k] += sgn * val


# ---------------------------------------------------------------------------
# geometric helpers
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _closest_on_triangle(p, a, b, c):
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0 and d2 <= 0:
        return a
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return a + d1 / (d1 - d3) * ab
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return a + d2 / (d2 - d6) * ac
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b)
    denom = 1.0 / (va + vb + vc)
    return a + ab * (vb * denom) + ac * (vc * denom)


@nb.njit(cache=True)
def _segment_distance(p1, q1, p2, q2):
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    c = d1 @ r
    b = d1 @ d2
    denom = a * e - b * b
    s = 0.0
    if denom > 1e-300:
        s = min(max((b * f - c * e) / denom, 0.0), 1.0)
    t = (b * s + f) / e
    if t < 0.0:
        t = 0.0
        s = min(max(-c / a, 0.0), 1.0)
    elif t > 1.0:
        t = 1.0
        s = min(max((b - c) / a, 0.0), 1.0)
    diff = p1 + d1 * s - (p2 + d2 * t)
    return math.sqrt(diff @ diff)


@nb.njit(cache=True)
def triangle_distance_bounds(ta, tb):
    """Exact (min, max) distance between two non-intersecting triangles."""
    dmax = 0.0
    for i in range(3):
        for j in range(3):
            w = ta[i] - tb[j]
            dmax = max(dmax, math.sqrt(w @ w))
    dmin = np.inf
    for i in range(3):
        q = _closest_on_triangle(ta[i], tb[0], tb[1], tb[2])
        w = ta[i] - q
        dmin = min(dmin, math.sqrt(w @ w))
        q = _closest_on_triangle(tb[i], ta[0], ta[1], ta[2])
        w = tb[i] - q
        dmin = min(dmin, math.sqrt(w @ w))
    for i in range(3):
        for j in range(3):
            dmin = min(
                dmin, _segment_distance(ta[i], ta[(i + 1) % 3], tb[j], tb[(j + 1) % 3])
            )
    return dmin, dmax


def distance_bounds(ta, tb) -> tuple[float, float]:
    return triangle_distance_bounds(
        np.ascontiguousarray(ta, dtype=float), np.ascontiguousarray(tb, dtype=float)
    )


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def _plane_coords(tri: np.ndarray):
    """Orthonormal in-plane frame (origin, e1, e2, normal) of a triangle."""
    e1 = tri[1] - tri[0]
    n = np.cross(e1, tri[2] - tri[0])
    n /= np.linalg.norm(n)
    e1 = e1 / np.linalg.norm(e1)
    return tri[0], e1, np.cross(n, e1), n


def _linear_basis(tri2: np.ndarray):
    """Coefficients ``(c, g)`` with barycentric ``lambda_k(y) = c_k + g_k . y``."""
    A = np.column_stack([tri2, np.ones(3)])  # rows (x, y, 1)
    coef = np.linalg.inv(A)  # columns -> basis k
    return coef[2], coef[:2].T


def _basis_values(basis, bary):
    if basis is None or basis == "constant":
        return np.ones(len(bary))
    kind, k = basis
    if kind != "linear":
        raise ValueError(f"unknown basis {basis!r}")
    return bary[:, k]


def shell_pair_integral(
    ta,
    tb,
    shell: ShellSpec | None,
    kernel: KernelId = KernelId.INV_DISTANCE,
    basis_a="constant",
    basis_b="constant",
    rule: QuadratureRule | None = None,
    n_sub: int | None = None,
) -> float:
    """Double integral of ``kernel * basis_a(x) * basis_b(y)`` over the shell.

    ``ta``/``tb`` are (3, 3) vertex arrays (``x`` ranges over ``ta``).  Bases
    are ``"constant"`` or ``("linear", k)`` for the barycentric hat of corner
    ``k``.  ``shell=None`` integrates over all distances.  The
    ``GRADGRAD_INV_DISTANCE`` kernel multiplies by the constant product of the
    surface gradients of the two linear bases.  ``HALFSPACE_ADJOINT_DL`` is
    ``n_x . (y - x)/|x - y|^3`` plus the same term for the image ``y'`` of
    ``y`` in the plane z = 0.
    """
    ta = np.asarray(ta, dtype=float)
    tb = np.asarray(tb, dtype=float)
    rule = rule or QuadratureRule()
    kernel = KernelId(kernel)
    r_lo, r_hi = (0.0, np.inf) if shell is None else (shell.r_lo, shell.r_hi)

    if kernel is not KernelId.HALFSPACE_ADJOINT_DL:
        dmin, dmax = distance_bounds(ta, tb)
        if dmin > r_hi or dmax < r_lo:
            return 0.0
    if n_sub is None:
        n_sub = 2**rule.depth
    xq, wq, bary = rule.points(ta, n_sub)
    wa = wq * _basis_values(basis_a, bary)
    big = 1e3 * (np.abs(ta).max() + np.abs(tb).max() + 1.0)
    radii = np.array([r_lo, min(r_hi, big)])

    if kernel is KernelId.HALFSPACE_ADJOINT_DL:
        if basis_b not in (None, "constant"):
            raise NotImplementedError("adjoint double layer uses constant bases")
        na = np.cross(ta[1] - ta[0], ta[2] - ta[0])
        na /= np.linalg.norm(na)
        g, gw = np.polynomial.legendre.leggauss(rule.angular_points)
        total = 0.0
        image = tb * np.array([1.0, 1.0, -1.0])
        for tri in (tb, image[[0, 2, 1]]):
            for x, w in zip(xq, wa):
                out = np.zeros(2)
                ball_double_layer(x, na, tri, radii, g, gw, out)
                total += w * (out[1] - out[0])
        return float(total)

    origin, e1, e2, n = _plane_coords(tb)
    coplanar = (
        abs(np.dot(ta - origin, n)).max() <= 1e-12 * (1.0 + np.abs(tb).max())
    )
    factor = 1.0
    if kernel is KernelId.NORMAL_DOT_INV_DISTANCE:
        na = np.cross(ta[1] - ta[0], ta[2] - ta[0])
        factor = float(np.dot(na / np.linalg.norm(na), n))
    elif kernel is KernelId.GRADGRAD_INV_DISTANCE:
        ga = _surface_gradient(ta, basis_a)
        gb = _surface_gradient(tb, basis_b)
        factor = float(ga @ gb)
        wa = wq.copy()
        basis_b = "constant"

    if not coplanar:
        if basis_b not in (None, "constant"):
            raise NotImplementedError("linear inner basis needs coplanar triangles")
        total = 0.0
        for x, w in zip(xq, wa):
            out = np.zeros(2)
            ball_inverse_distance(x, tb, radii, out)
            total += w * (out[1] - out[0])
        return float(factor * total)

    to2 = lambda p: np.column_stack([(p - origin) @ e1, (p - origin) @ e2])
    tb2 = to2(tb)
    x2 = to2(xq)
    if basis_b in (None, "constant"):
        c, g = 1.0, np.zeros(2)
    else:
        cs, gs = _linear_basis(tb2)
        c, g = cs[basis_b[1]], gs[basis_b[1]]
    total = 0.0
    for (px, py), w in zip(x2, wa):
        out = np.zeros((2, _NMOM))
        disc_moments_2d(px, py, tb2, radii, out)
        m = out[1] - out[0]
        val_at_x = c + g[0] * px + g[1] * py
        total += w * (val_at_x * m[0] + g[0] * m[3] + g[1] * m[4])
    return float(factor * total)


def _surface_gradient(tri, basis) -> np.ndarray:
    if basis is None or basis == "constant":
        return np.zeros(3)
    origin, e1, e2, _ = _plane_coords(tri)
    tri2 = np.column_stack([(tri - origin) @ e1, (tri - origin) @ e2])
    _, g = _linear_basis(tri2)
    gk = g[basis[1]]
    return gk[0] * e1 + gk[1] * e2


def shell_partition_check(
    ta, tb, shells, kernel=KernelId.INV_DISTANCE, basis_a="constant", basis_b="constant", rule=None
) -> float:
    """``|sum of shell integrals - unrestricted integral|`` for a shell cover."""
    parts = sum(
        shell_pair_integral(ta, tb, s, kernel, basis_a, basis_b, rule) for s in shells
    )
    full = shell_pair_integral(ta, tb, None, kernel, basis_a, basis_b, rule)
    return abs(parts - full)


def arc_length_in_triangle(tri, center, radius: float) -> float:
    """Length of ``T cap {|x - center| = radius}``.

    The sphere meets the triangle plane in a circle whose clipped length is
    returned; zero when the sphere misses the plane or the triangle.
    """
    tri = np.asarray(tri, dtype=float)
    center = np.asarray(center, dtype=float)
    origin, e1, e2, n = _plane_coords(tri)
    h = float(np.dot(center - origin, n))
    if radius <= abs(h):
        return 0.0
    rho = math.sqrt(radius * radius - h * h)
    c2 = np.array([np.dot(center - origin, e1), np.dot(center - origin, e2)])
    t2 = np.column_stack([(tri - origin) @ e1, (tri - origin) @ e2]) - c2
    # angles where the circle crosses the edges
    cuts = [0.0, 2 * math.pi]
    for i in range(3):
        a, b = t2[i], t2[(i + 1) % 3]
        dvec = b - a
        A = dvec @ dvec
        B = 2 * a @ dvec
        C = a @ a - rho * rho
        disc = B * B - 4 * A * C
        if disc < 0:
            continue
        sq = math.sqrt(disc)
        for s in ((-B - sq) / (2 * A), (-B + sq) / (2 * A)):
            if 0.0 <= s <= 1.0:
                p = a + s * dvec
                cuts.append(math.atan2(p[1], p[0]) % (2 * math.pi))
    cuts = np.unique(np.array(cuts))
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    pts = rho * np.column_stack([np.cos(mids), np.sin(mids)])
    # barycentric inside test
    T = np.column_stack([t2[1] - t2[0], t2[2] - t2[0]])
    lam = np.linalg.solve(T, (pts - t2[0]).T).T
    inside = (lam[:, 0] >= 0) & (lam[:, 1] >= 0) & (lam.sum(axis=1) <= 1)
    return float(rho * np.sum(np.diff(cuts)[inside]))
