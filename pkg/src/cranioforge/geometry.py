"""Vectorised point/triangle primitives shared by refine, shape and printcheck."""
import numpy as np
from scipy.spatial import cKDTree


def closest_points_on_triangles(p, a, b, c):
    """Closest point to each ``p[i]`` on triangle ``(a[i], b[i], c[i])``.

    Region-based method from Ericson, *Real-Time Collision Detection*;
    all inputs are (n, 3) arrays (broadcasting allowed).
    """
    p, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (p, a, b, c)))
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(cond, value):
        nonlocal done
        sel = cond & ~done
        if np.any(sel):
            out[sel] = value[sel] if value.ndim == 2 else value
            done |= sel

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        t = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t[:, None] * ab)
        assign((d6 >= 0) & (d5 <= d6), c)
        t = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t[:, None] * ac)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + t[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones(len(p), bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


class SurfaceProjector:
    """Approximate closest-point queries against a fixed triangle mesh.

    Candidates are the ``k`` triangles with the nearest centroids; exact
    for reasonably uniform meshes, which is all remeshing needs.
    """

    def __init__(self, mesh, k=12):
        self.corners = mesh.corners()
        self.normals = mesh.face_cross()
        self.tree = cKDTree(self.corners.mean(axis=1))
        self.k = min(k, len(self.corners))

    def project(self, points, normals=None):
        """Closest surface point; with ``normals``, only faces facing the same way.

        The orientation filter keeps points near thin walls from snapping
        onto the opposite sheet. A point with no compatible candidate falls
        back to the unfiltered closest point.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            return points.copy()
        _, cand = self.tree.query(points, k=self.k)
        cand = cand.reshape(len(points), -1)
        best = np.empty_like(points)
        best_d = np.full(len(points), np.inf)
        any_best = np.empty_like(points)
        any_d = np.full(len(points), np.inf)
        for j in range(cand.shape[1]):
            tri = self.corners[cand[:, j]]
            q = closest_points_on_triangles(points, tri[:, 0], tri[:, 1], tri[:, 2])
            d = np.einsum("ij,ij->i", q - points, q - points)
            better = d < any_d
            any_best[better] = q[better]
            any_d[better] = d[better]
            if normals is not None:
                d = np.where(np.einsum("ij,ij->i", self.normals[cand[:, j]], normals) > 0, d, np.inf)
            better = d < best_d
            best[better] = q[better]
            best_d[better] = d[better]
        missing = ~np.isfinite(best_d)
        best[missing] = any_best[missing]
        return best


def sample_surface(mesh, count, rng):
    """Area-uniform random points; returns ``(points, face_index)``."""
    areas = mesh.face_areas()
    cdf = np.cumsum(areas)
    faces = np.searchsorted(cdf, rng.random(count) * cdf[-1], side="right")
    faces = np.minimum(faces, len(areas) - 1)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    c = mesh.corners()[faces]
    pts = (1 - r1)[:, None] * c[:, 0] + (r1 * (1 - r2))[:, None] * c[:, 1] + (r1 * r2)[:, None] * c[:, 2]
    return pts, faces
