"""Triangulation quality: isotropic remeshing, relaxation and QEM decimation."""
from __future__ import annotations

import heapq
import logging

import numpy as np
from scipy import sparse

from ._editmesh import EditableMesh, dist, dot, norm, sub
from .errors import InvalidLambda, NonManifoldInput
from .geometry import SurfaceProjector
from .mesh import TriMesh, validate

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.5
DEFAULT_MU = -0.53
DEFAULT_ITERATIONS = 10
DEFAULT_DECIMATE_RATIO = 0.5
SINGULAR_RELATIVE_DET = 1e-10
BOUNDARY_WEIGHT = 1e3


def _require_manifold(mesh):
    report = validate(mesh)
    if not report.is_manifold:
        raise NonManifoldInput(
            f"{report.non_manifold_edge_count} non-manifold edges, "
            f"{report.non_manifold_vertex_count} non-manifold vertices"
        )
    return report


# --- relaxation -------------------------------------------------------------

def _umbrella(mesh):
    """Row-normalised vertex adjacency and the boundary-vertex mask."""
    edges, _, counts = mesh.edge_table()
    n = mesh.n_vertices
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    boundary = np.zeros(n, bool)
    boundary[edges[counts == 1].ravel()] = True
    movable = (deg > 0) & ~boundary
    return sparse.diags(inv) @ adj, movable


def relax(mesh, iterations=DEFAULT_ITERATIONS, lam=DEFAULT_LAMBDA, mode="uniform", mu=DEFAULT_MU,
          callback=None):
    """Umbrella-operator smoothing with boundary vertices held fixed.

    ``mode="uniform"`` moves every interior vertex a fraction ``lam`` toward
    the centroid of its one-ring. ``mode="taubin"`` follows each such step
    with an inflating step of factor ``mu`` (``mu < -lam``). Connectivity is
    never changed. ``callback(i, mesh)`` is invoked after each iteration.
    """
    if not 0 < lam < 1:
        raise InvalidLambda(f"lambda must lie in (0, 1), got {lam}")
    if mode not in ("uniform", "taubin"):
        raise ValueError(f"mode must be 'uniform' or 'taubin', got {mode!r}")
    if mode == "taubin" and not mu < -lam:
        raise InvalidLambda(f"taubin needs mu < -lambda, got mu={mu}, lambda={lam}")
    if mesh.n_triangles == 0:
        return mesh
    avg, movable = _umbrella(mesh)
    factors = (lam,) if mode == "uniform" else (lam, mu)
    pts = np.array(mesh.vertices)
    for it in range(iterations):
        for f in factors:
            delta = avg @ pts - pts
            pts[movable] += f * delta[movable]
        if callback is not None:
            callback(it, TriMesh(pts, mesh.triangles))
    return TriMesh(pts, mesh.triangles)


# --- decimation -------------------------------------------------------------

def _face_quadrics(em):
    quadrics = [np.zeros((4, 4)) for _ in em.pos]
    for f, tri in enumerate(em.faces):
        if not em.face_alive[f]:
            continue
        n = np.array(em.face_normal(tri))
        length = np.linalg.norm(n)
        if length == 0:
            continue
        n = n / length
        plane = np.append(n, -np.dot(n, em.pos[tri[0]]))
        k = np.outer(plane, plane)
        for v in tri:
            quadrics[v] += k
        # boundary edges get a stiff plane through the edge, perpendicular
        # to the face, so the outline resists being cut short
        for i in range(3):
            a, b = tri[i], tri[(i + 1) % 3]
            if not em.is_boundary_edge(a, b):
                continue
            m = np.cross(np.subtract(em.pos[b], em.pos[a]), n)
            ml = np.linalg.norm(m)
            if ml == 0:
                continue
            m = m / ml
            plane = np.append(m, -np.dot(m, em.pos[a]))
            k = BOUNDARY_WEIGHT * np.outer(plane, plane)
            quadrics[a] += k
            quadrics[b] += k
    return quadrics


def _optimal(q, pa, pb):
    pa, pb = np.asarray(pa), np.asarray(pb)
    a = q[:3, :3]
    scale = max(abs(np.trace(a)) / 3.0, 1e-300)
    if abs(np.linalg.det(a)) < SINGULAR_RELATIVE_DET * scale ** 3:
        p = (pa + pb) / 2
    else:
        p = np.linalg.solve(a, -q[:3, 3])
    h = np.append(p, 1.0)
    return p, max(float(h @ q @ h), 0.0)


def decimate(mesh, target_triangles=None, ratio=None):
    """Quadric-error edge collapse down to ``target_triangles``.

    Give either an absolute target or a ``ratio`` of the current count.
    Collapses are taken cheapest first (ties: lowest vertex pair) and are
    refused when they would break manifoldness, turn a face by more than
    90 degrees, or pull a boundary vertex off the boundary.
    """
    if target_triangles is None:
        target_triangles = int(round((DEFAULT_DECIMATE_RATIO if ratio is None else ratio) * mesh.n_triangles))
    if target_triangles < 4:
        raise ValueError(f"target_triangles must be >= 4, got {target_triangles}")
    if target_triangles >= mesh.n_triangles:
        return mesh
    _require_manifold(mesh)
    em = EditableMesh(mesh)
    quadrics = _face_quadrics(em)
    boundary = [em.is_boundary_vertex(v) for v in range(len(em.pos))]
    version = [0] * len(em.pos)
    heap = []

    def candidate(a, b):
        if boundary[a] and boundary[b] and not em.is_boundary_edge(a, b):
            return None
        q = quadrics[a] + quadrics[b]
        if boundary[a] != boundary[b]:
            keep, gone = (a, b) if boundary[a] else (b, a)
            p = em.pos[keep]
            h = np.append(p, 1.0)
            return max(float(h @ q @ h), 0.0), keep, gone, p
        p, cost = _optimal(q, em.pos[a], em.pos[b])
        return cost, a, b, p

    def push(a, b):
        a, b = (a, b) if a < b else (b, a)
        c = candidate(a, b)
        if c is not None:
            heapq.heappush(heap, (c[0], a, b, version[a], version[b]))

    for a, b in em.edges():
        push(a, b)

    while em.n_faces > target_triangles and heap:
        cost, a, b, va, vb = heapq.heappop(heap)
        if not (em.vertex_alive[a] and em.vertex_alive[b]) or version[a] != va or version[b] != vb:
            continue
        if not em.edge_faces(a, b):
            continue
        c = candidate(a, b)
        if c is None:
            continue
        _, keep, gone, p = c
        if em.n_faces - len(em.edge_faces(a, b)) < 4:
            break
        if not em.collapse_ok(keep, gone, p):
            continue
        em.collapse(keep, gone, p)
        quadrics[keep] = quadrics[keep] + quadrics[gone]
        version[keep] += 1
        for w in em.neighbors(keep):
            push(keep, w)
    out = em.to_trimesh()
    logger.info("decimated %d -> %d triangles", mesh.n_triangles, out.n_triangles)
    return out


# --- isotropic remeshing ----------------------------------------------------

def _split_long(em, high):
    changed = True
    while changed:
        changed = False
        for a, b in sorted(em.edges()):
            if em.vertex_alive[a] and em.edge_faces(a, b):
                if dist(em.pos[a], em.pos[b]) > high:
                    em.split(a, b)
                    changed = True


def _collapse_short(em, low, high, boundary):
    for a, b in sorted(em.edges()):
        if not (em.vertex_alive[a] and em.vertex_alive[b]) or not em.edge_faces(a, b):
            continue
        if dist(em.pos[a], em.pos[b]) >= low:
            continue
        if boundary[a] and boundary[b]:
            continue
        if boundary[a] or boundary[b]:
            keep, gone = (a, b) if boundary[a] else (b, a)
            p = em.pos[keep]
        else:
            keep, gone = a, b
            p = tuple((x + y) / 2 for x, y in zip(em.pos[a], em.pos[b]))
        if em.n_faces - len(em.edge_faces(a, b)) < 4:
            continue
        if em.collapse_ok(keep, gone, p, max_edge=high):
            em.collapse(keep, gone, p)


def _valence_target(em, v, boundary):
    return 4 if boundary[v] else 6


def _equalize_valences(em, boundary):
    for a, b in sorted(em.edges()):
        faces = em.edge_faces(a, b)
        if len(faces) != 2:
            continue
        f1, f2 = faces
        c = em.opposite(f1, a, b)
        d = em.opposite(f2, a, b)
        if c == d or d in em.neighbors(c):
            continue
        val = {v: len(em.neighbors(v)) for v in (a, b, c, d)}
        if val[a] <= 3 or val[b] <= 3:
            continue
        tgt = {v: _valence_target(em, v, boundary) for v in (a, b, c, d)}
        before = sum(abs(val[v] - tgt[v]) for v in (a, b, c, d))
        val[a] -= 1
        val[b] -= 1
        val[c] += 1
        val[d] += 1
        after = sum(abs(val[v] - tgt[v]) for v in (a, b, c, d))
        if after >= before:
            continue
        o1, o2 = em.face_normal(em.faces[f1]), em.face_normal(em.faces[f2])
        n_old = (o1[0] + o2[0], o1[1] + o2[1], o1[2] + o2[2])
        em.flip(a, b)
        n1, n2 = (em.face_normal(em.faces[f]) for f in sorted(em.edge_faces(c, d)))
        ok = dot(n1, n_old) > 0 and dot(n2, n_old) > 0 and dot(n1, n2) > 0
        ok = ok and min(norm(n1), norm(n2)) > 1e-12
        if not ok:
            em.flip(c, d)  # undo


def _tangential_relax(em, boundary, projector):
    verts = [v for v in range(len(em.pos)) if em.vertex_alive[v] and em.vf[v] and not boundary[v]]
    if not verts:
        return
    new, normals = [], []
    for v in verts:
        ring = em.neighbors(v)
        k = len(ring)
        q = tuple(sum(em.pos[w][i] for w in ring) / k for i in range(3))
        n = em.vertex_normal(v)
        h = dot(n, sub(em.pos[v], q))
        new.append((q[0] + n[0] * h, q[1] + n[1] * h, q[2] + n[2] * h))
        normals.append(n)
    projected = projector.project(np.array(new), np.array(normals))
    old = {v: em.pos[v] for v in verts}
    for v, p in zip(verts, projected.tolist()):
        em.pos[v] = tuple(p)
    # Projection near creases can fold triangles; undo moves that flip a face.
    suspects = {f for v in verts for f in em.vf[v]}
    while suspects:
        revert = set()
        for f in suspects:
            tri = em.faces[f]
            after = em.face_normal(tri)
            before = em.face_normal(tri, old)
            if dot(before, after) <= 0 or norm(after) <= 1e-12 * norm(before):
                revert.update(v for v in tri if v in old and em.pos[v] != old[v])
        for v in revert:
            em.pos[v] = old[v]
        suspects = {f for v in revert for f in em.vf[v]}


def remesh(mesh, target_edge, iterations=5):
    """Isotropic remeshing toward edge length ``target_edge`` (mm).

    Each iteration splits edges longer than 4/3 of the target, collapses
    edges shorter than 4/5 of it, flips edges to push valences toward 6
    (4 on the boundary) and relaxes interior vertices tangentially before
    projecting them back onto the input surface. Boundary vertices never
    move.
    """
    if not target_edge > 0:
        raise ValueError(f"target_edge must be positive, got {target_edge}")
    _require_manifold(mesh)
    if mesh.n_triangles == 0:
        return mesh
    high = 4.0 / 3.0 * target_edge
    low = 4.0 / 5.0 * target_edge
    projector = SurfaceProjector(mesh)
    em = EditableMesh(mesh)
    for it in range(iterations):
        _split_long(em, high)
        boundary = [em.is_boundary_vertex(v) if em.vf[v] else False for v in range(len(em.pos))]
        _collapse_short(em, low, high, boundary)
        boundary = [em.is_boundary_vertex(v) if em.vf[v] else False for v in range(len(em.pos))]
        _equalize_valences(em, boundary)
        _tangential_relax(em, boundary, projector)
        logger.debug("remesh iteration %d: %d faces", it, em.n_faces)
    return em.to_trimesh()
