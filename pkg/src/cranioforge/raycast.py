"""Batched ray/triangle-mesh first-hit queries over a uniform grid.

Rays march through grid cells together (3D DDA, one cell per step for all
live rays) and test only the triangles binned in their current cell.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "CRANIOFORGE_THREADS"


def thread_count():
    """Worker cap from ``CRANIOFORGE_THREADS``; 0 or unset means CPU count."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def ray_triangle(orig, dirs, a, b, c):
    """Moller-Trumbore, row-wise; returns t (inf on miss). Edges count as hits."""
    e1 = b - a
    e2 = c - a
    p = np.cross(dirs, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-300
    inv = np.divide(1.0, det, out=np.zeros_like(det), where=ok)
    s = orig - a
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", dirs, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
    return np.where(hit, t, np.inf)


class RayGrid:
    """Triangles binned into a uniform grid of roughly ``cells_per_tri``."""

    def __init__(self, mesh, cells_per_tri=1.0, max_res=128):
        corners = mesh.corners()
        self.corners = corners
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        pad = 1e-6 * max(float(np.linalg.norm(hi - lo)), 1e-12)
        self.lo = lo - pad
        extent = hi - lo + 2 * pad
        n_cells = max(1.0, cells_per_tri * len(corners))
        cell = (np.prod(extent) / n_cells) ** (1.0 / 3.0)
        self.res = np.clip(np.ceil(extent / cell), 1, max_res).astype(np.int64)
        self.size = extent / self.res

        tlo = np.floor((corners.min(axis=1) - self.lo) / self.size).astype(np.int64)
        thi = np.floor((corners.max(axis=1) - self.lo) / self.size).astype(np.int64)
        tlo = np.clip(tlo, 0, self.res - 1)
        thi = np.clip(thi, 0, self.res - 1)
        span = thi - tlo + 1
        count = span.prod(axis=1)
        tri_id = np.repeat(np.arange(len(corners)), count)
        local = np.arange(len(tri_id)) - np.repeat(np.cumsum(count) - count, count)
        sx, sy = span[tri_id, 0], span[tri_id, 1]
        ix = tlo[tri_id, 0] + local % sx
        iy = tlo[tri_id, 1] + (local // sx) % sy
        iz = tlo[tri_id, 2] + local // (sx * sy)
        cell_id = self._flat(ix, iy, iz)
        order = np.lexsort((tri_id, cell_id))
        self.items = tri_id[order]
        self.start = np.searchsorted(cell_id[order], np.arange(self.res.prod() + 1))

    def _flat(self, ix, iy, iz):
        return (iz * self.res[1] + iy) * self.res[0] + ix

    def first_hit(self, origins, dirs):
        """Distance along each (unit) ray to its first hit; inf when it escapes."""
        origins = np.asarray(origins, float).reshape(-1, 3)
        dirs = np.asarray(dirs, float).reshape(-1, 3)
        n = len(origins)
        workers = thread_count()
        chunk = max(1024, -(-n // workers))
        bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
        if len(bounds) <= 1:
            return self._march(origins, dirs)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: self._march(origins[b[0]:b[1]], dirs[b[0]:b[1]]), bounds))
        return np.concatenate(parts)

    def _march(self, origins, dirs):
        n = len(origins)
        best = np.full(n, np.inf)
        if n == 0:
            return best
        hi = self.lo + self.res * self.size
        # clip each ray to the grid box
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t0 = (self.lo - origins) * inv
            t1 = (hi - origins) * inv
        tnear = np.nan_to_num(np.minimum(t0, t1), nan=-np.inf).max(axis=1)
        tfar = np.nan_to_num(np.maximum(t0, t1), nan=np.inf).min(axis=1)
        tstart = np.maximum(tnear, 0.0)
        live = tstart <= tfar
        entry = origins + tstart[:, None] * dirs
        cell = np.clip(np.floor((entry - self.lo) / self.size).astype(np.int64), 0, self.res - 1)
        step = np.where(dirs > 0, 1, -1)
        with np.errstate(divide="ignore", invalid="ignore"):
            boundary = self.lo + (cell + (step > 0)) * self.size
            tmax = np.where(dirs != 0, (boundary - origins) * inv, np.inf)
            tdelta = np.where(dirs != 0, self.size * np.abs(inv), np.inf)

        idx = np.flatnonzero(live)
        cell, tmax, tdelta, step = cell[idx], tmax[idx], tdelta[idx], step[idx]
        while len(idx):
            cid = self._flat(cell[:, 0], cell[:, 1], cell[:, 2])
            s, e = self.start[cid], self.start[cid + 1]
            cnt = e - s
            texit = tmax.min(axis=1)
            if cnt.sum():
                ray = np.repeat(np.arange(len(idx)), cnt)
                off = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                tri = self.items[np.repeat(s, cnt) + off]
                c = self.corners[tri]
                r = idx[ray]
                t = ray_triangle(origins[r], dirs[r], c[:, 0], c[:, 1], c[:, 2])
                np.minimum.at(best, r, t)
            done = best[idx] <= texit
            axis = np.argmin(tmax, axis=1)
            rows = np.arange(len(idx))
            cell[rows, axis] += step[rows, axis]
            tmax[rows, axis] += tdelta[rows, axis]
            out = np.any((cell < 0) | (cell >= self.res), axis=1)
            keep = ~(done | out)
            idx, cell, tmax, tdelta, step = idx[keep], cell[keep], tmax[keep], tdelta[keep], step[keep]
        return best
