"""Structured triangulations of the unit square [-0.5, 0.5]^2."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PERIMETER = 4.0


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float

    def to_dict(self):
        return {"center": list(self.center), "radius": self.radius}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["center"]), float(d["radius"]))


@dataclass(eq=False)
class Mesh:
    """Uniform mesh with every cell split along its lower-left/upper-right diagonal.

    Node ``i + j (n + 1)`` sits at ``(-0.5 + i h, -0.5 + j h)``.  Boundary nodes
    are listed counter-clockwise starting at the first node at or after
    ``(0.5, 0)``; ``boundary_arclength`` is measured from that point.
    ``interior_faces`` rows are ``(node_a, node_b, tri_left, tri_right)``.
    """

    n: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_nodes: np.ndarray
    boundary_arclength: np.ndarray
    interior_nodes: np.ndarray
    interior_faces: np.ndarray
    boundary_edges: np.ndarray
    boundary_edge_triangles: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def n_cells_per_side(self) -> int:
        return self.n

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def gradients(self) -> np.ndarray:
        """P1 basis gradients, shape (n_triangles, 3, 2)."""
        if "grads" not in self._cache:
            p = self.nodes[self.triangles]
            area2 = 2.0 * self.areas()
            g = np.empty((self.n_triangles, 3, 2))
            for i in range(3):
                a = p[:, (i + 1) % 3]
                b = p[:, (i + 2) % 3]
                g[:, i, 0] = (a[:, 1] - b[:, 1]) / area2
                g[:, i, 1] = (b[:, 0] - a[:, 0]) / area2
            self._cache["grads"] = g
        return self._cache["grads"]

    def locate(self, points) -> np.ndarray:
        """Index of a triangle containing each point (points on edges go to either side)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        s = (pts + 0.5) * self.n
        i = np.clip(np.floor(s[:, 0]).astype(int), 0, self.n - 1)
        j = np.clip(np.floor(s[:, 1]).astype(int), 0, self.n - 1)
        upper = (s[:, 1] - j) > (s[:, 0] - i)
        return 2 * (j * self.n + i) + upper.astype(int)


def build_unit_square_mesh(n: int) -> Mesh:
    if n < 2:
        raise ValueError(f"need at least 2 cells per side, got {n}")
    h = 1.0 / n
    coords = -0.5 + h * np.arange(n + 1)
    X, Y = np.meshgrid(coords, coords)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    I, J = np.meshgrid(np.arange(n), np.arange(n))
    ll = (J * (n + 1) + I).ravel()
    lr, ul = ll + 1, ll + n + 1
    ur = ul + 1
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([ll, lr, ur])
    tris[1::2] = np.column_stack([ll, ur, ul])

    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # idx[j, i]
    ring = np.concatenate([
        idx[:, n][:-1],          # right side, upwards
        idx[n, ::-1][:-1],       # top, leftwards
        idx[::-1, 0][:-1],       # left, downwards
        idx[0, :][:-1],          # bottom, rightwards
    ])
    arc = _arclength(nodes[ring])
    start = int(np.argmin(arc))
    ring = np.roll(ring, -start)
    arc = np.roll(arc, -start)

    interior = idx[1:-1, 1:-1].ravel()

    # each undirected edge with the triangles touching it
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    owner = np.tile(np.arange(len(tris)), 3)
    key = np.sort(edges, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    key, owner, edges = key[order], owner[order], edges[order]
    same = np.all(key[1:] == key[:-1], axis=1)
    first = np.flatnonzero(same)
    interior_faces = np.column_stack([key[first], owner[first], owner[first + 1]])
    paired = np.zeros(len(key), dtype=bool)
    paired[first] = paired[first + 1] = True
    bedges = edges[~paired]
    btris = owner[~paired]

    # orient boundary edges along the counter-clockwise ring
    pos = np.empty((n + 1) ** 2, dtype=np.int64)
    pos[ring] = np.arange(len(ring))
    m = len(ring)
    fwd = (pos[bedges[:, 1]] - pos[bedges[:, 0]]) % m == 1
    bedges = np.where(fwd[:, None], bedges, bedges[:, ::-1])
    o = np.argsort(pos[bedges[:, 0]])

    return Mesh(
        n=n,
        nodes=nodes,
        triangles=tris,
        boundary_nodes=ring,
        boundary_arclength=arc,
        interior_nodes=interior,
        interior_faces=interior_faces,
        boundary_edges=bedges[o],
        boundary_edge_triangles=btris[o],
    )


def _arclength(pts: np.ndarray) -> np.ndarray:
    """Counter-clockwise distance along the square boundary from (0.5, 0)."""
    x, y = pts[:, 0], pts[:, 1]
    tol = 1e-12
    s = np.empty(len(pts))
    right = np.isclose(x, 0.5, atol=tol)
    top = np.isclose(y, 0.5, atol=tol) & ~right
    left = np.isclose(x, -0.5, atol=tol) & ~top
    bottom = np.isclose(y, -0.5, atol=tol) & ~left & ~right
    s[right] = np.mod(y[right], PERIMETER)
    s[top] = 0.5 + (0.5 - x[top])
    s[left] = 1.5 + (0.5 - y[left])
    s[bottom] = 2.5 + (x[bottom] + 0.5)
    lower_right = right & (y < -tol)
    s[lower_right] = 4.0 + y[lower_right]
    return s


def subdomain_elements(mesh: Mesh, omega: Disc) -> np.ndarray:
    """Triangles with all three vertices inside the closed disc ``omega``."""
    if omega.radius <= 0:
        raise ValueError("disc radius must be positive")
    d = mesh.nodes - np.asarray(omega.center, dtype=float)
    inside = np.einsum("ij,ij->i", d, d) <= omega.radius ** 2 * (1 + 1e-12)
    elems = np.flatnonzero(inside[mesh.triangles].all(axis=1))
    if len(elems) == 0:
        raise ValueError(f"no triangle of the {mesh.n}x{mesh.n} mesh lies inside {omega}")
    return elems


def element_nodes(mesh: Mesh, elements) -> np.ndarray:
    return np.unique(mesh.triangles[np.asarray(elements)])


def prolong(coarse: Mesh, fine: Mesh, v) -> np.ndarray:
    """Nodal interpolation of a coarse P1 field onto a nested finer mesh."""
    if fine.n % coarse.n:
        raise ValueError(f"{fine.n}x{fine.n} mesh is not a refinement of {coarse.n}x{coarse.n}")
    v = np.asarray(v, dtype=float)
    t = coarse.locate(fine.nodes)
    tri = coarse.triangles[t]
    p0 = coarse.nodes[tri[:, 0]]
    g = coarse.gradients()[t]
    # barycentric coordinates from the affine basis functions
    lam = np.empty((len(fine.nodes), 3))
    d = fine.nodes - p0
    lam[:, 1] = np.einsum("ij,ij->i", g[:, 1], d)
    lam[:, 2] = np.einsum("ij,ij->i", g[:, 2], d)
    lam[:, 0] = 1.0 - lam[:, 1] - lam[:, 2]
    if v.ndim == 1:
        return np.einsum("ij,ij->i", lam, v[tri])
    return np.einsum("ij,ijk->ik", lam, v[tri])


def child_elements(coarse: Mesh, fine: Mesh, elements) -> np.ndarray:
    """Fine triangles lying inside the given coarse triangles (nested meshes)."""
    p = fine.nodes[fine.triangles].mean(axis=1)
    mask = np.zeros(coarse.n_triangles, dtype=bool)
    mask[np.asarray(elements)] = True
    return np.flatnonzero(mask[coarse.locate(p)])
