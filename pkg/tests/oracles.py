"""Independent reference computations used by the tests."""

import numpy as np


def triangle_area(t):
    t = np.asarray(t, dtype=float)
    return 0.5 * np.linalg.norm(np.cross(t[1] - t[0], t[2] - t[0]))


def sample_triangle(t, n, rng):
    u = rng.random((n, 2))
    flip = u.sum(axis=1) > 1
    u[flip] = 1 - u[flip]
    t = np.asarray(t, dtype=float)
    return t[0] + u[:, :1] * (t[1] - t[0]) + u[:, 1:] * (t[2] - t[0])


def barycentric(t, p):
    """Barycentric coordinates of points ``p`` (n, 3) in triangle ``t``."""
    t = np.asarray(t, dtype=float)
    e1, e2 = t[1] - t[0], t[2] - t[0]
    G = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
    rhs = np.stack([(p - t[0]) @ e1, (p - t[0]) @ e2])
    l12 = np.linalg.solve(G, rhs)
    return np.column_stack([1 - l12[0] - l12[1], l12[0], l12[1]])


def mc_shell_integral(ta, tb, r_lo, r_hi, n=1_000_000, seed=0, kernel="inv",
                      basis_a=None, basis_b=None, chunk=1_000_000):
    """Monte Carlo estimate and standard error of the shell-restricted pair integral.

    ``kernel`` is ``"inv"`` (1/r) or ``"dl"`` (n_x.(y - x)/r**3); bases are
    ``None`` or a barycentric corner index.
    """
    rng = np.random.default_rng(seed)
    ta = np.asarray(ta, dtype=float)
    tb = np.asarray(tb, dtype=float)
    na = np.cross(ta[1] - ta[0], ta[2] - ta[0])
    na /= np.linalg.norm(na)
    s1 = s2 = 0.0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        x = sample_triangle(ta, m, rng)
        y = sample_triangle(tb, m, rng)
        d = y - x
        r = np.linalg.norm(d, axis=1)
        k = 1 / r if kernel == "inv" else (d @ na) / r**3
        if basis_a is not None:
            k = k * barycentric(ta, x)[:, basis_a]
        if basis_b is not None:
            k = k * barycentric(tb, y)[:, basis_b]
        v = np.where((r >= r_lo) & (r < r_hi), k, 0.0)
        s1 += v.sum()
        s2 += (v**2).sum()
        done += m
    mean = s1 / n
    var = s2 / n - mean**2
    scale = triangle_area(ta) * triangle_area(tb)
    return scale * mean, scale * np.sqrt(max(var, 0.0) / n)


def random_triangle(rng, center, size, planar=True):
    pts = center + size * rng.uniform(-1, 1, (3, 3))
    if planar:
        pts[:, 2] = center[2]
    return pts


def random_pair_and_shell(rng, planar=True):
    """A random triangle pair and a shell that cuts through their distance range."""
    while True:
        ta = random_triangle(rng, np.zeros(3), 0.3, planar)
        off = rng.uniform(-0.4, 0.4, 3)
        if planar:
            off[2] = 0.0
        tb = random_triangle(rng, off, 0.3, planar)
        if min(triangle_area(ta), triangle_area(tb)) > 0.01:
            break
    dist = np.linalg.norm(sample_triangle(ta, 2000, rng) - sample_triangle(tb, 2000, rng), axis=1)
    lo, hi = np.quantile(dist, [0.25, 0.75])
    return ta, tb, lo, hi


def four_triangle_mesh():
    """Square [-1, 1]^2 cut into four triangles around one interior node."""
    from tdbem.geometry import Mesh

    nodes = np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0], [0, 0, 0]], dtype=float)
    tris = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    return Mesh(nodes, tris, [0, 1, 2, 3], 1.0, 1)
