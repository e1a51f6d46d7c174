"""Hole filling, bridging and excise-and-refill of defective regions."""
from __future__ import annotations

import logging
import math

import numpy as np

from .errors import InvalidLoop, NotBoundaryEdge, NothingRemoved, SharedVertex
from .mesh import BoundaryLoop, TriMesh, trace_loops

logger = logging.getLogger(__name__)

MAX_DP_LOOP = 100


def _existing_edges(mesh):
    edges, _, _ = mesh.edge_table()
    return {(int(a), int(b)) for a, b in edges}


def _tri_area(p, q, r):
    return 0.5 * float(np.linalg.norm(np.cross(q - p, r - p)))


def min_area_triangulation(points, forbidden=None):
    """Minimum total-area triangulation of a closed polygon.

    ``points`` is (n, 3). ``forbidden(i, j)`` may veto a diagonal. Returns a
    list of index triples ``(i, k, j)`` with ``i < k < j`` that preserve the
    polygon's orientation, or ``None`` when every triangulation is vetoed.
    """
    n = len(points)
    if n < 3:
        return None
    if n == 3:
        return [(0, 1, 2)]
    inf = math.inf
    cost = [[0.0] * n for _ in range(n)]
    split = [[-1] * n for _ in range(n)]
    area = {}

    def tri(i, k, j):
        key = (i, k, j)
        if key not in area:
            area[key] = _tri_area(points[i], points[k], points[j])
        return area[key]

    bad = [[False] * n for _ in range(n)]
    if forbidden is not None:
        for i in range(n):
            for j in range(i + 2, n):
                if not (i == 0 and j == n - 1):
                    bad[i][j] = forbidden(i, j)
    for gap in range(2, n):
        for i in range(0, n - gap):
            j = i + gap
            if bad[i][j]:
                cost[i][j] = inf
                continue
            best, arg = inf, -1
            for k in range(i + 1, j):
                c = cost[i][k] + cost[k][j]
                if c == inf:
                    continue
                c += tri(i, k, j)
                if c < best:
                    best, arg = c, k
            cost[i][j] = best
            split[i][j] = arg
    if cost[0][n - 1] == inf:
        return None
    out = []
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        k = split[i][j]
        out.append((i, k, j))
        stack.append((i, k))
        stack.append((k, j))
    out.sort()
    return out


def _loop_is_current(mesh, loop):
    he = {tuple(e) for e in mesh.boundary_half_edges().tolist()}
    return len(loop) >= 3 and all(e in he for e in loop.edges())


def _patch_for_loop(mesh, loop, existing=None):
    """New triangles (and maybe one new vertex) closing ``loop``."""
    if existing is None:
        existing = _existing_edges(mesh)
    # fill triangles traverse the loop edges backwards
    ring = list(loop.vertices[::-1])
    n = len(ring)
    pts = mesh.vertices[ring]
    if n <= MAX_DP_LOOP:
        def forbidden(i, j):
            a, b = ring[i], ring[j]
            return (min(a, b), max(a, b)) in existing

        tris = min_area_triangulation(pts, forbidden)
        if tris is not None:
            return [(ring[i], ring[k], ring[j]) for i, k, j in tris], None
        logger.warning("loop of %d vertices has no diagonal-free triangulation; adding a centre vertex", n)
    else:
        centroid = pts.mean(axis=0)
        apex = int(np.argmin(np.linalg.norm(pts - centroid, axis=1)))
        fan = [(ring[apex], ring[(apex + k) % n], ring[(apex + k + 1) % n]) for k in range(1, n - 1)]
        diagonals = {(min(a, c), max(a, c)) for a, _, c in fan[1:]} | {(min(a, b), max(a, b)) for a, b, _ in fan[1:]}
        if not diagonals & existing:
            logger.warning("loop of %d vertices exceeds %d; using a fan triangulation", n, MAX_DP_LOOP)
            return fan, None
        logger.warning("loop of %d vertices: fan would duplicate edges; adding a centre vertex", n)
    # -1 stands for the centre vertex appended by _apply_patches
    return [(ring[i], ring[(i + 1) % n], -1) for i in range(n)], pts.mean(axis=0)


def _apply_patches(mesh, patches):
    verts = [mesh.vertices]
    tris = [mesh.triangles]
    for new_tris, new_vertex in patches:
        if new_vertex is not None:
            idx = sum(len(v) for v in verts)
            new_tris = [tuple(idx if x == -1 else x for x in t) for t in new_tris]
            verts.append(np.asarray(new_vertex, float).reshape(1, 3))
        tris.append(np.asarray(new_tris, np.int64).reshape(-1, 3))
    return TriMesh(np.concatenate(verts), np.concatenate(tris))


def fill_hole(mesh, loop):
    """Close one boundary loop by minimum-area triangulation of its vertices."""
    if not isinstance(loop, BoundaryLoop):
        loop = BoundaryLoop(tuple(int(v) for v in loop), 0.0)
    if not _loop_is_current(mesh, loop):
        raise InvalidLoop(f"loop {loop.vertices[:8]}... is not a boundary loop of this mesh")
    return _apply_patches(mesh, [_patch_for_loop(mesh, loop)])


def fill_all_holes(mesh, max_perimeter=None, only=None):
    """Fill every loop with perimeter <= ``max_perimeter``, smallest first.

    ``only`` optionally restricts filling to loops touching these vertices.
    Returns ``(mesh, filled_count)``.
    """
    limit = math.inf if max_perimeter is None else float(max_perimeter)
    filled = 0
    skipped = set()
    while True:
        loops = [
            l for l in trace_loops(mesh, strict=False)
            if l.perimeter <= limit and l.vertices not in skipped
            and (only is None or not only.isdisjoint(l.vertices))
        ]
        if not loops:
            break
        loops.sort(key=lambda l: (l.perimeter, l.vertices[0]))
        loop = loops[0]
        if len(set(loop.vertices)) != len(loop.vertices):
            logger.warning("skipping self-touching loop through %d vertices", len(loop))
            skipped.add(loop.vertices)
            continue
        mesh = fill_hole(mesh, loop)
        filled += 1
    return mesh, filled


def _boundary_half_edge(mesh, edge):
    a, b = int(edge[0]), int(edge[1])
    he = {tuple(e) for e in mesh.boundary_half_edges().tolist()}
    if (a, b) in he:
        return a, b
    if (b, a) in he:
        return b, a
    raise NotBoundaryEdge(f"edge ({a}, {b}) is not a boundary edge")


def bridge(mesh, edge_a, edge_b):
    """Join two boundary edges with a two-triangle strip.

    The strip uses the shorter of the two quad diagonals. Edges on the same
    loop split it in two; edges on different loops merge them.
    """
    a0, a1 = _boundary_half_edge(mesh, edge_a)
    b0, b1 = _boundary_half_edge(mesh, edge_b)
    if {a0, a1} & {b0, b1}:
        raise SharedVertex(f"edges ({a0}, {a1}) and ({b0}, {b1}) share a vertex")
    v = mesh.vertices
    # quad a1 -> a0 -> b1 -> b0 traverses both edges against their triangles
    if np.linalg.norm(v[a1] - v[b1]) <= np.linalg.norm(v[a0] - v[b0]):
        new = [(a1, a0, b1), (a1, b1, b0)]
    else:
        new = [(a1, a0, b0), (a0, b1, b0)]
    return TriMesh(v, np.concatenate([mesh.triangles, np.array(new, np.int64)]))


def region_faces(mesh, seed, radius):
    """Indices of triangles whose centroid lies within ``radius`` of ``seed``."""
    centroids = mesh.corners().mean(axis=1)
    d = np.linalg.norm(centroids - np.asarray(seed, float), axis=1)
    return np.flatnonzero(d <= radius)


def remove_region(mesh, seed, radius):
    """Delete triangles with centroid within ``radius`` of ``seed``."""
    doomed = region_faces(mesh, seed, radius)
    if len(doomed) == 0:
        raise NothingRemoved(f"no triangle centroid within {radius} mm of {tuple(seed)}")
    keep = np.ones(mesh.n_triangles, bool)
    keep[doomed] = False
    return TriMesh(mesh.vertices, mesh.triangles[keep])


def refill_region(mesh, seed, radius):
    """Cut out the region around ``seed`` and fill only the holes it opened."""
    doomed = region_faces(mesh, seed, radius)
    touched = set(np.unique(mesh.triangles[doomed]).tolist()) if len(doomed) else set()
    cut = remove_region(mesh, seed, radius)
    out, _ = fill_all_holes(cut, only=touched)
    return out
