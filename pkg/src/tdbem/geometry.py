"""Screens and triangulations.

Three screen kinds are supported: the square ``[-1, 1]^2 x {0}``, the unit
disc in the plane ``z = 0`` and a cylindrical strip hovering over the ground
plane (the horn geometry).  Square and disc meshes can be graded towards the
boundary with nodes placed at ``-1 + (k/N)**beta`` (square) and radii
``1 - (k/N)**beta`` (disc).
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class ScreenKind(str, enum.Enum):
    SQUARE = "square"
    DISC = "disc"
    HORN = "horn"


@dataclass(frozen=True)
class Mesh:
    """Flat-triangle surface mesh.

    Attributes
    ----------
    nodes : ndarray, shape (n_nodes, 3)
    triangles : ndarray, shape (n_triangles, 3)
        Node indices, counter-clockwise seen from the normal side.
    boundary_nodes : ndarray
        Sorted indices of nodes on the screen boundary.
    beta : float
        Grading exponent (1 for uniform meshes).
    levels : int
        Refinement parameter ``N_l``.
    kind : ScreenKind
    metadata : dict
        Construction parameters that are not implied by ``kind``.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_nodes: np.ndarray
    beta: float = 1.0
    levels: int = 0
    kind: ScreenKind = ScreenKind.SQUARE
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise ValueError("nodes must have shape (n, 3)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError("triangles must have shape (m, 3)")
        if tris.size and (tris.min() < 0 or tris.max() >= len(nodes)):
            raise ValueError("triangle index out of range")
        nodes.setflags(write=False)
        tris.setflags(write=False)
        bnd = np.unique(np.asarray(self.boundary_nodes, dtype=np.int64))
        bnd.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "boundary_nodes", bnd)
        object.__setattr__(self, "kind", ScreenKind(self.kind))
        object.__setattr__(self, "_cache", {})

    # -- derived geometry -------------------------------------------------

    def _cached(self, key, fn):
        cache = self._cache
        if key not in cache:
            value = fn()
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            cache[key] = value
        return cache[key]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def vertices(self) -> np.ndarray:
        """Triangle corner coordinates, shape (m, 3, 3)."""
        return self._cached("vertices", lambda: self.nodes[self.triangles])

    @property
    def _cross(self) -> np.ndarray:
        def fn():
            v = self.vertices
            return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

        return self._cached("cross", fn)

    @property
    def areas(self) -> np.ndarray:
        return self._cached("areas", lambda: 0.5 * np.linalg.norm(self._cross, axis=1))

    @property
    def normals(self) -> np.ndarray:
        return self._cached(
            "normals", lambda: self._cross / np.linalg.norm(self._cross, axis=1)[:, None]
        )

    @property
    def centroids(self) -> np.ndarray:
        return self._cached("centroids", lambda: self.vertices.mean(axis=1))

    @property
    def diameters(self) -> np.ndarray:
        """Longest edge of every triangle."""

        def fn():
            v = self.vertices
            e = np.stack(
                [v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]], axis=1
            )
            return np.linalg.norm(e, axis=2).max(axis=1)

        return self._cached("diameters", fn)

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @property
    def h_min(self) -> float:
        return float(self.diameters.min())

    @property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        # nodes not referenced by any triangle carry no basis function
        used = np.zeros(self.n_nodes, dtype=bool)
        used[self.triangles.ravel()] = True
        return np.flatnonzero(mask & used)

    @property
    def is_flat(self) -> bool:
        """True when every node lies in the plane z = 0."""
        return bool(np.all(np.abs(self.nodes[:, 2]) <= 1e-14))

    def digest(self) -> str:
        """Short content hash used to key caches and output files."""
        h = hashlib.sha256()
        h.update(self.nodes.tobytes())
        h.update(self.triangles.tobytes())
        return h.hexdigest()[:16]

    def translated(self, offset) -> "Mesh":
        return Mesh(
            self.nodes + np.asarray(offset, dtype=float),
            self.triangles,
            self.boundary_nodes,
            self.beta,
            self.levels,
            self.kind,
            dict(self.metadata),
        )

    def reflected(self) -> "Mesh":
        """Mirror image across z = 0 with orientation preserved."""
        nodes = self.nodes * np.array([1.0, 1.0, -1.0])
        # reflection flips orientation; swap two corners to restore it
        return Mesh(
            nodes,
            self.triangles[:, [0, 2, 1]],
            self.boundary_nodes,
            self.beta,
            self.levels,
            self.kind,
            dict(self.metadata),
        )

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "beta": self.beta,
            "N_l": self.levels,
            "nodes": self.nodes.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary_nodes": self.boundary_nodes.tolist(),
            "metadata": self.metadata,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Mesh":
        return cls(
            np.asarray(data["nodes"], dtype=float),
            np.asarray(data["triangles"], dtype=np.int64),
            np.asarray(data["boundary_nodes"], dtype=np.int64),
            float(data.get("beta", 1.0)),
            int(data.get("N_l", 0)),
            ScreenKind(data.get("kind", "square")),
            dict(data.get("metadata", {})),
        )

    @classmethod
    def from_json(cls, path) -> "Mesh":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _check_grading(levels: int, beta: float) -> None:
    if int(levels) != levels or levels < 1:
        raise ValueError(f"levels must be a positive integer, got {levels!r}")
    if not beta >= 1.0:
        raise ValueError(f"grading exponent must satisfy beta >= 1, got {beta!r}")


def graded_coordinates(levels: int, beta: float) -> np.ndarray:
    """Nodes of the graded subdivision of [-1, 1].

    On [-1, 0] the nodes are ``-1 + (k/N)**beta``; [0, 1] is the mirror image.
    """
    _check_grading(levels, beta)
    k = np.arange(levels + 1)
    left = -1.0 + (k / levels) ** beta
    left[-1] = 0.0
    return np.concatenate([left, -left[-2::-1]])


def graded_square_mesh(levels: int, beta: float = 1.0) -> Mesh:
    """Graded triangulation of the square screen, ``8 * levels**2`` triangles.

    Every cell is cut along the diagonal pointing at its nearest corner, so the
    lines ``y = x`` and ``y = -x`` consist of mesh edges.
    """
    xs = graded_coordinates(levels, beta)
    n = len(xs)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), np.zeros(n * n)])

    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
    i, j = i.ravel(), j.ravel()
    p00 = i * n + j
    p10 = (i + 1) * n + j
    p01 = i * n + j + 1
    p11 = (i + 1) * n + j + 1
    # cells in the first/third quadrant get the (00)-(11) diagonal
    main = (i < levels) == (j < levels)
    tris = np.empty((2 * len(i), 3), dtype=np.int64)
    tris[0::2] = np.where(
        main[:, None],
        np.column_stack([p00, p10, p11]),
        np.column_stack([p00, p10, p01]),
    )
    tris[1::2] = np.where(
        main[:, None],
        np.column_stack([p00, p11, p01]),
        np.column_stack([p10, p11, p01]),
    )
    edge = (np.abs(nodes[:, 0]) == 1.0) | (np.abs(nodes[:, 1]) == 1.0)
    return Mesh(
        nodes,
        tris,
        np.flatnonzero(edge),
        float(beta),
        int(levels),
        ScreenKind.SQUARE,
    )


def disc_ring_radii(levels: int, beta: float) -> np.ndarray:
    """Ring radii ``1 - (k/N)**beta`` for k = 0..N, outermost first."""
    _check_grading(levels, beta)
    k = np.arange(levels + 1)
    r = 1.0 - (k / levels) ** beta
    r[-1] = 0.0
    return r


def _zip_rings(inner: np.ndarray, inner_ang, outer: np.ndarray, outer_ang):
    """Triangulate the annulus between two node rings sorted by angle."""
    na, nb = len(inner), len(outer)
    ia = ib = 0
    # unwrapped angle sequences, closing the loop
    aa = np.append(inner_ang, inner_ang[0] + 2 * np.pi)
    bb = np.append(outer_ang, outer_ang[0] + 2 * np.pi)
    tris = []
    while ia < na or ib < nb:
        a0, b0 = inner[ia % na], outer[ib % nb]
        if ib >= nb or (ia < na and aa[ia + 1] <= bb[ib + 1]):
            tris.append((a0, inner[(ia + 1) % na], b0))
            ia += 1
        else:
            tris.append((a0, outer[(ib + 1) % nb], b0))
            ib += 1
    return tris


def graded_disc_mesh(
    levels: int, beta: float = 1.0, ring_slope: int = 8, ring_offset: int = 2
) -> Mesh:
    """Graded triangulation of the unit disc.

    Ring ``j`` (counted from the centre, ``j = 1..levels``) carries
    ``ring_slope * j + ring_offset`` equally spaced nodes, giving
    ``ring_slope * levels**2 + ring_offset * (2 * levels - 1)`` triangles.
    With the defaults ``levels = 18`` yields 2662 triangles.
    """
    _check_grading(levels, beta)
    if ring_slope < 1 or ring_offset < 0 or ring_slope + ring_offset < 3:
        raise ValueError("innermost ring needs at least three nodes")
    radii = disc_ring_radii(levels, beta)[::-1]  # centre first
    nodes = [np.zeros(3)]
    rings, angles = [], []
    start = 1
    for j in range(1, levels + 1):
        m = ring_slope * j + ring_offset
        ang = 2 * np.pi * (np.arange(m) + 0.5 * (j % 2)) / m
        pts = np.column_stack([np.cos(ang), np.sin(ang), np.zeros(m)]) * radii[j]
        if j == levels:
            # exact unit circle for boundary nodes
            pts[:, :2] /= np.linalg.norm(pts[:, :2], axis=1)[:, None]
        nodes.append(pts)
        rings.append(np.arange(start, start + m))
        angles.append(ang)
        start += m
    nodes = np.vstack([nodes[0][None, :]] + nodes[1:])

    tris = []
    first = rings[0]
    m = len(first)
    tris += [(0, first[i], first[(i + 1) % m]) for i in range(m)]
    for j in range(1, levels):
        tris += _zip_rings(rings[j - 1], angles[j - 1], rings[j], angles[j])
    tris = np.asarray(tris, dtype=np.int64)

    # enforce counter-clockwise orientation (normal +z)
    v = nodes[tris]
    cz = (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1]) - (
        v[:, 1, 1] - v[:, 0, 1]
    ) * (v[:, 2, 0] - v[:, 0, 0])
    flip = cz < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return Mesh(
        nodes,
        tris,
        rings[-1],
        float(beta),
        int(levels),
        ScreenKind.DISC,
        {"ring_slope": ring_slope, "ring_offset": ring_offset},
    )


def horn_surface_mesh(
    radius: float,
    clearance: float,
    resolution: int,
    width: float | None = None,
    axial: int | None = None,
) -> Mesh:
    """Closed cylindrical strip above the ground plane z = 0.

    The cylinder axis is parallel to the y-axis through ``(0, 0, radius +
    clearance)``, so the strip touches (``clearance = 0``) or hovers over the
    ground near the origin.  ``resolution`` nodes are placed around the
    circumference and ``axial`` segments across ``width``.  Normals point away
    from the axis.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if clearance < 0:
        raise ValueError("clearance must be non-negative")
    if int(resolution) != resolution or resolution < 3:
        raise ValueError("resolution must be an integer >= 3")
    width = 2.0 * radius / 3.0 if width is None else float(width)
    if axial is None:
        axial = max(1, int(round(width / (2 * np.pi * radius / resolution))))
    theta = 2 * np.pi * np.arange(resolution) / resolution
    # theta = 0 is the lowest point of the circle
    xs = radius * np.sin(theta)
    zs = radius + clearance - radius * np.cos(theta)
    ys = np.linspace(-width / 2, width / 2, axial + 1)
    nodes = np.array([[xs[i], y, zs[i]] for y in ys for i in range(resolution)])
    tris = []
    for a in range(axial):
        for i in range(resolution):
            p00 = a * resolution + i
            p10 = a * resolution + (i + 1) % resolution
            p01 = (a + 1) * resolution + i
            p11 = (a + 1) * resolution + (i + 1) % resolution
            tris += [(p00, p10, p11), (p00, p11, p01)]
    tris = np.asarray(tris, dtype=np.int64)
    mesh_nodes = nodes.copy()
    mesh_nodes[:, 2] = np.maximum(mesh_nodes[:, 2], clearance)
    v = mesh_nodes[tris]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    c = v.mean(axis=1)
    outward = c - np.column_stack([np.zeros(len(c)), c[:, 1], np.full(len(c), radius + clearance)])
    flip = np.einsum("ij,ij->i", n, outward) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    bnd = np.concatenate([np.arange(resolution), axial * resolution + np.arange(resolution)])
    return Mesh(
        mesh_nodes,
        tris,
        bnd,
        1.0,
        int(resolution),
        ScreenKind.HORN,
        {"radius": radius, "clearance": clearance, "width": width, "axial": axial},
    )


def mesh_diameter(mesh: Mesh) -> float:
    """Largest distance between two mesh nodes."""
    pts = mesh.nodes
    if len(pts) == 0:
        raise ValueError("empty mesh")
    try:
        from scipy.spatial import ConvexHull

        if len(pts) > 32 and not mesh.is_flat:
            pts = pts[ConvexHull(pts).vertices]
        elif len(pts) > 32:
            pts = pts[ConvexHull(pts[:, :2]).vertices]
    except Exception:  # degenerate hulls fall back to all nodes
        pass
    best = 0.0
    for start in range(0, len(pts), 512):
        block = pts[start : start + 512]
        d = np.linalg.norm(block[:, None, :] - pts[None, :, :], axis=2)
        best = max(best, float(d.max()))
    return best


def euler_characteristic(mesh: Mesh) -> int:
    tris = mesh.triangles
    edges = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    n_edges = len(np.unique(edges, axis=0))
    n_vertices = len(np.unique(tris))
    return n_vertices - n_edges + len(tris)
