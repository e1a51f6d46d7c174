"""Deliberate geometry edits: planar cut with capping and brush sculpting."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import mapbox_earcut
import numpy as np

from .errors import CapFailed, CapRequiresWatertight, NonUnitNormal
from .mesh import TriMesh, trace_loops, validate
from .segmentation import points_in_polygon

logger = logging.getLogger(__name__)

SLIVER_AREA = 1e-12
UNIT_TOLERANCE = 1e-6
COLLINEAR_SINE = 1e-9


@dataclass(frozen=True)
class Plane:
    point: tuple
    normal: tuple

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > UNIT_TOLERANCE:
            raise NonUnitNormal(f"plane normal {tuple(n)} is not unit length")
        object.__setattr__(self, "point", tuple(float(x) for x in self.point))
        object.__setattr__(self, "normal", tuple(float(x) for x in n))

    def signed_distance(self, pts):
        return (np.asarray(pts) - np.asarray(self.point)) @ np.asarray(self.normal)

    def basis(self):
        """Two unit vectors spanning the plane, ``(u, v, n)`` right-handed."""
        n = np.asarray(self.normal)
        helper = np.eye(3)[int(np.argmin(np.abs(n)))]
        u = np.cross(n, helper)
        u /= np.linalg.norm(u)
        return u, np.cross(n, u), n


def _side(keep):
    if keep not in ("positive", "negative"):
        raise ValueError(f"keep must be 'positive' or 'negative', got {keep!r}")
    return 1.0 if keep == "positive" else -1.0


def _clip(mesh, plane, sign):
    """Keep the ``sign`` side of every triangle; returns (vertices, triangles)."""
    v = mesh.vertices
    d = sign * plane.signed_distance(v)
    scale = max(float(np.ptp(v, axis=0).max()) if len(v) else 0.0, 1.0)
    d[np.abs(d) <= 1e-12 * scale] = 0.0
    n0 = np.asarray(plane.point)
    nn = np.asarray(plane.normal)

    tri = mesh.triangles
    dt = d[tri]
    inside = dt >= 0
    whole = inside.all(axis=1) & (dt > 0).any(axis=1)
    straddle = (dt > 0).any(axis=1) & (dt < 0).any(axis=1)

    new_pts = []
    cut_index = {}

    def cut_vertex(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in cut_index:
            lo, hi = key
            t = d[lo] / (d[lo] - d[hi])
            p = v[lo] + t * (v[hi] - v[lo])
            p = p - np.dot(p - n0, nn) * nn  # land exactly on the plane
            cut_index[key] = len(v) + len(new_pts)
            new_pts.append(p)
        return cut_index[key]

    out = []
    for f in range(len(tri)):
        if whole[f]:
            out.append(tri[f].tolist())
        elif straddle[f]:
            poly = []
            for k in range(3):
                a, b = int(tri[f, k]), int(tri[f, (k + 1) % 3])
                if d[a] >= 0:
                    poly.append(a)
                if d[a] * d[b] < 0:
                    poly.append(cut_vertex(a, b))
            for k in range(1, len(poly) - 1):
                out.append([poly[0], poly[k], poly[k + 1]])
    verts = np.concatenate([v, np.asarray(new_pts, float).reshape(-1, 3)])
    tris = np.asarray(out, np.int64).reshape(-1, 3)
    if len(tris):
        c = verts[tris]
        area = 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
        sliver = area < SLIVER_AREA
        if sliver.any():
            logger.warning("dropping %d sliver triangles from the cut", int(sliver.sum()))
            tris = tris[~sliver]
    return verts, tris


def _nest(rings2d):
    """Group planar rings into (outer, holes) sets by containment depth."""
    n = len(rings2d)
    contains = np.zeros((n, n), bool)
    for i in range(n):
        for j in range(n):
            if i != j:
                probe = rings2d[j][0]
                contains[i, j] = points_in_polygon(probe[:1], probe[1:2], rings2d[i])[0]
    depth = contains.sum(axis=0)
    groups = []
    for i in np.flatnonzero(depth % 2 == 0):
        holes = [j for j in range(n) if contains[i, j] and depth[j] == depth[i] + 1]
        groups.append((int(i), holes))
    return groups


def _drop_collinear(ring):
    """Indices of ring points that are not interior to a straight run.

    Earcut silently discards collinear points (and makes zero-area ears from
    nearly collinear ones), which would leave T-junctions against the clipped
    side; we remove them ourselves and put them back afterwards. Removal repeats until no kept point is collinear
    with its kept neighbours.
    """
    keep = list(range(len(ring)))
    changed = True
    while changed and len(keep) > 3:
        changed = False
        out = []
        m = len(keep)
        for k in range(m):
            a, b, c = ring[keep[k - 1]], ring[keep[k]], ring[keep[(k + 1) % m]]
            ab, bc = b - a, c - b
            remaining = m - (k - len(out))
            turn = abs(ab[0] * bc[1] - ab[1] * bc[0])
            if turn <= COLLINEAR_SINE * np.hypot(*ab) * np.hypot(*bc) and ab @ bc > 0 and remaining > 3:
                changed = True
                continue
            out.append(keep[k])
        keep = out
    return keep


def _reinsert(tris, runs):
    """Split cap triangles so skipped collinear points become real vertices.

    ``runs`` maps a kept edge ``(i, j)`` to the points strictly between them.
    """
    tris = [list(t) for t in tris]
    owner = {}
    for f, t in enumerate(tris):
        for e in range(3):
            owner[(t[e], t[(e + 1) % 3])] = f
    for (i, j), mid in runs.items():
        if (i, j) in owner:
            chain = [i, *mid, j]
        elif (j, i) in owner:
            i, j = j, i
            chain = [i, *mid[::-1], j]
        else:
            raise CapFailed("cap triangulation lost a boundary edge")
        f = owner.pop((i, j))
        t = tris[f]
        k = t[(t.index(i) + 2) % 3]
        pieces = [[chain[s], chain[s + 1], k] for s in range(len(chain) - 1)]
        tris[f] = pieces[0]
        tris.extend(pieces[1:])
        for g in [f] + list(range(len(tris) - len(pieces) + 1, len(tris))):
            t = tris[g]
            for e in range(3):
                owner[(t[e], t[(e + 1) % 3])] = g
    return tris


def _cap_group(members, rings2d, loops):
    """Triangulate one outer ring with its holes; returns global vertex ids."""
    pts, ends, ids, runs = [], [], [], {}
    for i in members:
        ring = rings2d[i]
        gids = np.asarray(loops[i].vertices, np.int64)
        keep = _drop_collinear(ring)
        for k, a in enumerate(keep):
            b = keep[(k + 1) % len(keep)]
            between = [(a + s) % len(ring) for s in range(1, (b - a) % len(ring))]
            if between:
                runs[(int(gids[a]), int(gids[b]))] = [int(gids[s]) for s in between]
        pts.append(ring[keep])
        ids.append(gids[keep])
        ends.append(sum(len(p) for p in pts))
    local = mapbox_earcut.triangulate_float64(np.concatenate(pts), np.asarray(ends, np.uint32))
    t = np.concatenate(ids)[np.asarray(local, np.int64).reshape(-1, 3)]
    t = np.asarray(_reinsert(t.tolist(), runs), np.int64).reshape(-1, 3)
    expected = sum(len(rings2d[i]) for i in members) + 2 * (len(members) - 1) - 2
    if len(t) != expected:
        raise CapFailed(f"cap triangulation produced {len(t)} triangles, expected {expected}")
    return t


def _cap(verts, tris, plane, sign):
    mesh = TriMesh(verts, tris)
    loops = trace_loops(mesh, strict=False)
    if not loops:
        return tris
    u, w, n = plane.basis()
    rings = [verts[list(l.vertices)] for l in loops]
    rings2d = [np.stack([r @ u, r @ w], axis=1) for r in rings]
    want = -sign * n  # cap faces the discarded side
    caps = []
    for outer, holes in _nest(rings2d):
        t = _cap_group([outer] + holes, rings2d, loops)
        c = verts[t]
        normal = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        flip = normal @ want < 0
        t[flip] = t[flip][:, ::-1]
        caps.append(t)
    return np.concatenate([tris] + caps) if caps else tris


def plane_cut(mesh, point, normal, keep="positive", cap=True):
    """Remove everything on one side of a plane, optionally capping the cut.

    ``keep="positive"`` keeps the half-space the normal points into. Triangles
    crossing the plane are split at exact plane intersections; with ``cap``
    each cross-section loop is triangulated in plane coordinates so a
    watertight input stays watertight.
    """
    plane = Plane(point, normal)
    sign = _side(keep)
    if cap and not validate(mesh).is_watertight:
        raise CapRequiresWatertight("capping needs a watertight input mesh")
    d = sign * plane.signed_distance(mesh.vertices)
    if mesh.n_triangles and np.all(d[mesh.triangles] > 0):
        return mesh
    verts, tris = _clip(mesh, plane, sign)
    if cap and len(tris):
        tris = _cap(verts, tris, plane, sign)
    return TriMesh(verts, tris).compact()


def plane_cut_both(mesh, point, normal, cap=True):
    """Both halves of a cut, ``(positive, negative)``, for two-part printing."""
    return (plane_cut(mesh, point, normal, "positive", cap),
            plane_cut(mesh, point, normal, "negative", cap))


def smoothstep_falloff(t):
    """Weight 1 at t=0 falling smoothly to 0 at t=1."""
    s = np.clip(1.0 - np.asarray(t, float), 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def brush_field(mesh, center, radius, normals=None):
    """Per-vertex displacement for a unit offset: ``smoothstep * normal``.

    Zero outside the brush. Normals default to area-weighted vertex normals.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if normals is None:
        normals = mesh.vertex_normals()
    dist = np.linalg.norm(mesh.vertices - np.asarray(center, float), axis=1)
    field = np.zeros_like(mesh.vertices)
    hit = dist < radius
    field[hit] = smoothstep_falloff(dist[hit] / radius)[:, None] * np.asarray(normals, float)[hit]
    return field


def brush_displace(mesh, center, radius, offset, field=None):
    """Push vertices within ``radius`` of ``center`` along their normals.

    Vertex ``v`` moves ``offset * smoothstep(1 - |v - center| / radius)``
    along its area-weighted normal, both evaluated once on the input. Pass a
    ``field`` from :func:`brush_field` to reuse a frozen stroke, e.g. to undo
    it exactly with ``-offset``. Vertices outside the brush are untouched.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if offset == 0:
        return mesh
    if field is None:
        field = brush_field(mesh, center, radius)
    field = np.asarray(field, float)
    hit = np.any(field != 0, axis=1)
    verts = np.array(mesh.vertices)
    verts[hit] += offset * field[hit]
    return TriMesh(verts, mesh.triangles)
