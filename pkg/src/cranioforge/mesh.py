"""Indexed triangle mesh, topology queries, validation and measurement."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components as _graph_components
from scipy.spatial import cKDTree

from .errors import NonManifoldBoundary

logger = logging.getLogger(__name__)

DEFAULT_WELD_TOLERANCE = 1e-4
DEGENERATE_AREA = 1e-12


class TriMesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : (n, 3) float array, millimetres.
    triangles : (m, 3) int array of vertex indices, counter-clockwise seen
        from outside.
    """

    __slots__ = ("vertices", "triangles", "_cache")

    def __init__(self, vertices, triangles):
        v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if t.size:
            if t.min() < 0 or t.max() >= len(v):
                raise ValueError("triangle index out of range")
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ValueError("triangle references the same vertex twice")
        v.flags.writeable = False
        t.flags.writeable = False
        self.vertices = v
        self.triangles = t
        self._cache = {}

    def __repr__(self):
        return f"TriMesh(vertices={len(self.vertices)}, triangles={len(self.triangles)})"

    def __eq__(self, other):
        if not isinstance(other, TriMesh):
            return NotImplemented
        return (
            self.vertices.shape == other.vertices.shape
            and self.triangles.shape == other.triangles.shape
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
        )

    __hash__ = None

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def corners(self):
        """(m, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    def face_cross(self):
        c = self.corners()
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self):
        n = self.face_cross()
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    def vertex_normals(self):
        """Area-weighted unit vertex normals (zero for isolated vertices)."""
        acc = np.zeros_like(self.vertices)
        cross = self.face_cross()
        for k in range(3):
            np.add.at(acc, self.triangles[:, k], cross)
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)

    def half_edges(self):
        """(3m, 2) directed edges in triangle order: (a,b), (b,c), (c,a)."""
        t = self.triangles
        return np.stack([t, np.roll(t, -1, axis=1)], axis=2).reshape(-1, 2)

    def edge_table(self):
        """Unique undirected edges with incidence counts.

        Returns ``(edges, inverse, counts)``: ``edges`` is (E, 2) sorted pairs,
        ``inverse`` maps each half-edge to its row in ``edges``.
        """
        if "edges" not in self._cache:
            he = self.half_edges()
            if len(he):
                n = max(len(self.vertices), 1)
                key = np.minimum(he[:, 0], he[:, 1]) * n + np.maximum(he[:, 0], he[:, 1])
                uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
                edges = np.stack([uniq // n, uniq % n], axis=1)
            else:
                edges = np.zeros((0, 2), np.int64)
                inverse = np.zeros(0, np.int64)
                counts = np.zeros(0, np.int64)
            self._cache["edges"] = (edges, inverse.reshape(-1), counts)
        return self._cache["edges"]

    def edge_lengths(self):
        edges, _, _ = self.edge_table()
        return np.linalg.norm(self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]], axis=1)

    def boundary_half_edges(self):
        """Directed half-edges (a, b) whose undirected edge has one triangle."""
        _, inverse, counts = self.edge_table()
        return self.half_edges()[counts[inverse] == 1]

    def referenced_vertices(self):
        return np.unique(self.triangles)

    def copy_with(self, vertices=None, triangles=None):
        return TriMesh(self.vertices if vertices is None else vertices,
                       self.triangles if triangles is None else triangles)

    def compact(self):
        """Drop unreferenced vertices, preserving vertex order."""
        used = self.referenced_vertices()
        if len(used) == len(self.vertices):
            return self
        remap = np.full(len(self.vertices), -1, np.int64)
        remap[used] = np.arange(len(used))
        return TriMesh(self.vertices[used], remap[self.triangles])


def concatenate(*meshes):
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return TriMesh(np.concatenate(verts), np.concatenate(tris))


# --- welding ----------------------------------------------------------------

def weld_vertices(soup, tolerance=DEFAULT_WELD_TOLERANCE, return_dropped=False):
    """Build an indexed mesh from a triangle soup of shape (m, 3, 3).

    Points closer than ``tolerance`` are merged transitively; each merged
    vertex keeps the coordinates of its first occurrence. Triangles that
    collapse onto a repeated vertex are dropped.
    """
    soup = np.asarray(soup, dtype=np.float64).reshape(-1, 3, 3)
    points = soup.reshape(-1, 3)
    n = len(points)
    if n == 0:
        mesh = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
        return (mesh, 0) if return_dropped else mesh
    if tolerance <= 0:
        _, first, labels = np.unique(points, axis=0, return_index=True, return_inverse=True)
        labels = labels.reshape(-1)
        rep = first[labels]
    else:
        pairs = cKDTree(points).query_pairs(tolerance, output_type="ndarray")
        graph = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, labels = _graph_components(graph, directed=False)
        rep = np.full(labels.max() + 1, n, np.int64)
        np.minimum.at(rep, labels, np.arange(n))
        rep = rep[labels]
    # number classes by first occurrence
    order, index_of = np.unique(rep, return_inverse=True)
    tris = index_of.reshape(-1, 3)
    ok = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    dropped = int(np.count_nonzero(~ok))
    if dropped:
        logger.info("weld dropped %d degenerate triangles", dropped)
    mesh = TriMesh(points[order], tris[ok])
    return (mesh, dropped) if return_dropped else mesh


# --- boundary loops ---------------------------------------------------------

@dataclass(frozen=True)
class BoundaryLoop:
    """Closed cycle of boundary vertices, ordered along the adjacent
    triangles' winding (each ``v[i] -> v[i+1]`` is a triangle half-edge)."""

    vertices: tuple
    perimeter: float

    def __len__(self):
        return len(self.vertices)

    def edges(self):
        v = self.vertices
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]


def _loop_perimeter(vertices, loop):
    p = vertices[list(loop)]
    return float(np.linalg.norm(p - np.roll(p, -1, axis=0), axis=1).sum())


def trace_loops(mesh, strict=True):
    """Chain boundary half-edges into closed loops.

    With ``strict`` a vertex carrying more than one outgoing boundary edge
    raises :class:`NonManifoldBoundary`; otherwise such pinch vertices are
    resolved by picking outgoing edges in ascending target order.
    """
    he = mesh.boundary_half_edges()
    if len(he) == 0:
        return []
    out = {}
    for a, b in sorted(map(tuple, he.tolist())):
        out.setdefault(a, []).append(b)
    if strict:
        for a, targets in out.items():
            if len(targets) > 1:
                raise NonManifoldBoundary(f"vertex {a} has {2 * len(targets)} incident boundary edges")
    incoming = {}
    for a, b in he.tolist():
        incoming[b] = incoming.get(b, 0) + 1
    for a in out:
        if incoming.get(a, 0) != len(out[a]):
            raise NonManifoldBoundary(f"boundary edges at vertex {a} do not form closed cycles")
    loops = []
    for start in sorted(out):
        while out.get(start):
            loop = [start]
            cur = out[start].pop(0)
            while cur != start:
                loop.append(cur)
                nxt = out.get(cur)
                if not nxt:
                    raise NonManifoldBoundary(f"open boundary chain at vertex {cur}")
                cur = nxt.pop(0)
            loops.append(loop)
    result = []
    for loop in loops:
        i = loop.index(min(loop))
        loop = loop[i:] + loop[:i]
        result.append(BoundaryLoop(tuple(int(v) for v in loop), _loop_perimeter(mesh.vertices, loop)))
    result.sort(key=lambda l: (-l.perimeter, l.vertices[0]))
    return result


def boundary_loops(mesh):
    """All boundary loops, longest perimeter first."""
    return trace_loops(mesh, strict=True)


# --- validation -------------------------------------------------------------

@dataclass(frozen=True)
class ValidationResult:
    is_watertight: bool
    is_manifold: bool
    orientation_consistent: bool
    boundary_loop_count: int
    non_manifold_edge_count: int
    component_count: int
    euler_characteristic: int
    degenerate_triangle_count: int
    non_manifold_vertex_count: int = 0
    boundary_edge_count: int = 0

    def to_dict(self):
        return dict(self.__dict__)


def face_components(mesh):
    """Connected components over faces sharing an edge; returns (count, labels)."""
    m = mesh.n_triangles
    if m == 0:
        return 0, np.zeros(0, np.int64)
    _, inverse, _ = mesh.edge_table()
    face_of = np.repeat(np.arange(m), 3)
    # faces sharing an undirected edge: link every incidence to the edge node
    graph = sparse.coo_matrix(
        (np.ones(3 * m), (face_of, inverse + m)), shape=(m + inverse.max() + 1, m + inverse.max() + 1)
    )
    _, labels = _graph_components(graph, directed=False)
    face_labels = labels[:m]
    uniq, relabeled = np.unique(face_labels, return_inverse=True)
    return len(uniq), relabeled


def _non_manifold_vertices(mesh):
    """Vertices whose incident faces form more than one edge-connected fan."""
    t = mesh.triangles
    m = len(t)
    if m == 0:
        return 0
    # corner id = 3*f + k; link corners of the same vertex across each shared edge
    he = mesh.half_edges()
    _, inverse, counts = mesh.edge_table()
    corner_a = np.arange(3 * m)  # corner at he[:,0]
    corner_b = (corner_a // 3) * 3 + (corner_a % 3 + 1) % 3  # corner at he[:,1]
    interior = counts[inverse] == 2
    idx = np.flatnonzero(interior)
    order = np.argsort(inverse[idx], kind="stable")
    idx = idx[order]
    h1, h2 = idx[0::2], idx[1::2]
    # h2 runs either v->u (consistent) or u->v (flipped); pair corners by vertex
    same = he[h1, 0] == he[h2, 0]
    rows = [corner_a[h1], corner_b[h1]]
    cols = [np.where(same, corner_a[h2], corner_b[h2]), np.where(same, corner_b[h2], corner_a[h2])]
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    graph = sparse.coo_matrix((np.ones(len(r)), (r, c)), shape=(3 * m, 3 * m))
    _, labels = _graph_components(graph, directed=False)
    vert = t.reshape(-1)
    pairs = np.unique(vert * (3 * m) + labels)
    fans = np.bincount(pairs // (3 * m))
    return int(np.count_nonzero(fans > 1))


def validate(mesh):
    """Topology report; never raises."""
    edges, inverse, counts = mesh.edge_table()
    he = mesh.half_edges()
    nonmanifold = int(np.count_nonzero(counts > 2))
    n_boundary = int(np.count_nonzero(counts == 1))
    if len(he):
        directed = he[:, 0] * max(mesh.n_vertices, 1) + he[:, 1]
        oriented = len(np.unique(directed)) == len(directed)
    else:
        oriented = True
    try:
        loops = len(trace_loops(mesh, strict=False))
    except NonManifoldBoundary:
        loops = -1
    bad_vertices = _non_manifold_vertices(mesh)
    ncomp, _ = face_components(mesh)
    degenerate = int(np.count_nonzero(mesh.face_areas() <= DEGENERATE_AREA))
    euler = len(mesh.referenced_vertices()) - len(edges) + mesh.n_triangles
    manifold = nonmanifold == 0 and bad_vertices == 0
    watertight = mesh.n_triangles > 0 and n_boundary == 0 and nonmanifold == 0 and oriented
    return ValidationResult(
        is_watertight=watertight,
        is_manifold=manifold,
        orientation_consistent=oriented,
        boundary_loop_count=loops if loops >= 0 else n_boundary,
        non_manifold_edge_count=nonmanifold,
        component_count=ncomp,
        euler_characteristic=int(euler),
        degenerate_triangle_count=degenerate,
        non_manifold_vertex_count=bad_vertices,
        boundary_edge_count=n_boundary,
    )


# --- measurement ------------------------------------------------------------

@dataclass(frozen=True)
class Measurements:
    volume: float
    area: float
    bbox_min: tuple
    bbox_max: tuple
    approximate: bool

    @property
    def bbox_diagonal(self):
        return float(np.linalg.norm(np.subtract(self.bbox_max, self.bbox_min)))


def signed_volume(mesh):
    """Sum of origin-anchored signed tetrahedron volumes."""
    if mesh.n_triangles == 0:
        return 0.0
    c = mesh.corners()
    # anchor at the first vertex: same value in exact arithmetic, better conditioned
    c = c - mesh.vertices[mesh.triangles[0, 0]]
    return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)


def measure(mesh):
    """Enclosed volume, surface area and axis-aligned bounding box.

    ``approximate`` is set when the mesh is not watertight and oriented,
    in which case the volume has no physical meaning.
    """
    result = validate(mesh)
    used = mesh.vertices[mesh.referenced_vertices()] if mesh.n_triangles else mesh.vertices
    if len(used):
        lo, hi = used.min(axis=0), used.max(axis=0)
    else:
        lo = hi = np.zeros(3)
    return Measurements(
        volume=signed_volume(mesh),
        area=float(mesh.face_areas().sum()),
        bbox_min=tuple(float(x) for x in lo),
        bbox_max=tuple(float(x) for x in hi),
        approximate=not result.is_watertight,
    )
