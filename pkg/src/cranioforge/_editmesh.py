"""Mutable face-list mesh with vertex->face incidence, used by refine.

Kept private: public APIs only exchange immutable :class:`TriMesh` values.
Positions are plain float tuples; the per-collapse geometry is scalar work
where numpy call overhead would dominate.
"""
import math

import numpy as np

from .mesh import TriMesh


def sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def norm(a):
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


def dist(a, b):
    return norm(sub(a, b))


class EditableMesh:
    def __init__(self, mesh):
        self.pos = [tuple(p) for p in mesh.vertices.tolist()]
        self.faces = [list(t) for t in mesh.triangles.tolist()]
        self.face_alive = [True] * len(self.faces)
        self.vertex_alive = [True] * len(self.pos)
        self.vf = [set() for _ in self.pos]
        for f, tri in enumerate(self.faces):
            for v in tri:
                self.vf[v].add(f)
        self.n_faces = len(self.faces)

    # --- queries --------------------------------------------------------
    def neighbors(self, v):
        out = set()
        for f in self.vf[v]:
            out.update(self.faces[f])
        out.discard(v)
        return out

    def edge_faces(self, a, b):
        return self.vf[a] & self.vf[b]

    def is_boundary_edge(self, a, b):
        return len(self.edge_faces(a, b)) == 1

    def is_boundary_vertex(self, v):
        return len(self.neighbors(v)) != len(self.vf[v])

    def opposite(self, f, a, b):
        for v in self.faces[f]:
            if v != a and v != b:
                return v
        raise ValueError("degenerate face")

    def face_normal(self, tri, override=None):
        """Unnormalised normal (twice the area vector)."""
        if override:
            p0, p1, p2 = (override.get(v, self.pos[v]) for v in tri)
        else:
            p0, p1, p2 = self.pos[tri[0]], self.pos[tri[1]], self.pos[tri[2]]
        return cross(sub(p1, p0), sub(p2, p0))

    def vertex_normal(self, v):
        n = [0.0, 0.0, 0.0]
        for f in self.vf[v]:
            c = self.face_normal(self.faces[f])
            n[0] += c[0]
            n[1] += c[1]
            n[2] += c[2]
        length = norm(n)
        return tuple(x / length for x in n) if length > 0 else (0.0, 0.0, 0.0)

    def edges(self):
        seen = set()
        for f, tri in enumerate(self.faces):
            if not self.face_alive[f]:
                continue
            for i in range(3):
                a, b = tri[i], tri[(i + 1) % 3]
                key = (a, b) if a < b else (b, a)
                if key not in seen:
                    seen.add(key)
                    yield key

    # --- edits ----------------------------------------------------------
    def add_vertex(self, p):
        self.pos.append(tuple(float(x) for x in p))
        self.vertex_alive.append(True)
        self.vf.append(set())
        return len(self.pos) - 1

    def add_face(self, tri):
        self.faces.append(list(tri))
        self.face_alive.append(True)
        f = len(self.faces) - 1
        for v in tri:
            self.vf[v].add(f)
        self.n_faces += 1
        return f

    def remove_face(self, f):
        for v in self.faces[f]:
            self.vf[v].discard(f)
        self.face_alive[f] = False
        self.n_faces -= 1

    def collapse_ok(self, keep, gone, new_pos, max_edge=None, min_dot=0.0):
        """Topological and geometric legality of merging ``gone`` into ``keep``."""
        shared = self.edge_faces(keep, gone)
        if not shared:
            return False
        opposite = {self.opposite(f, keep, gone) for f in shared}
        # link condition
        if (self.neighbors(keep) & self.neighbors(gone)) != opposite:
            return False
        if self.is_boundary_vertex(keep) and self.is_boundary_vertex(gone) and len(shared) != 1:
            return False
        new_pos = tuple(new_pos)
        keep_tris = {tuple(sorted(self.faces[f])) for f in self.vf[keep] - shared}
        override = {keep: new_pos, gone: new_pos}
        for f in (self.vf[keep] | self.vf[gone]) - shared:
            tri = self.faces[f]
            new_tri = [keep if v == gone else v for v in tri]
            if gone in tri and tuple(sorted(new_tri)) in keep_tris:
                return False
            before = self.face_normal(tri)
            after = self.face_normal(new_tri, override)
            nb, na = norm(before), norm(after)
            if na <= 1e-12 * max(nb, 1e-30) or na == 0:
                return False
            if nb > 0 and dot(before, after) <= min_dot * nb * na:
                return False
            if max_edge is not None:
                for v in new_tri:
                    if v != keep and dist(self.pos[v], new_pos) > max_edge:
                        return False
        return True

    def collapse(self, keep, gone, new_pos):
        shared = self.edge_faces(keep, gone)
        for f in list(shared):
            self.remove_face(f)
        for f in list(self.vf[gone]):
            tri = self.faces[f]
            self.faces[f] = [keep if v == gone else v for v in tri]
            self.vf[keep].add(f)
        self.vf[gone] = set()
        self.vertex_alive[gone] = False
        self.pos[keep] = tuple(float(x) for x in new_pos)

    def split(self, a, b):
        pa, pb = self.pos[a], self.pos[b]
        m = self.add_vertex(((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2, (pa[2] + pb[2]) / 2))
        for f in sorted(self.edge_faces(a, b)):
            tri = self.faces[f]
            i = tri.index(a)
            # rotate so the face reads (x, y, c) with {x, y} = {a, b}
            rot = tri[i:] + tri[:i]
            if rot[1] == b:
                x, y, c = rot
            else:
                y, c, x = rot
            self.remove_face(f)
            self.add_face([x, m, c])
            self.add_face([m, y, c])
        return m

    def flip(self, a, b):
        f1, f2 = sorted(self.edge_faces(a, b))
        t1 = self.faces[f1]
        i = t1.index(a)
        rot = t1[i:] + t1[:i]
        if rot[1] != b:
            f1, f2 = f2, f1
        c = self.opposite(f1, a, b)
        d = self.opposite(f2, a, b)
        self.remove_face(f1)
        self.remove_face(f2)
        self.add_face([a, d, c])
        self.add_face([d, b, c])

    def to_trimesh(self):
        alive = [i for i, ok in enumerate(self.vertex_alive) if ok and self.vf[i]]
        remap = {v: i for i, v in enumerate(alive)}
        verts = np.array([self.pos[v] for v in alive], dtype=np.float64).reshape(-1, 3)
        tris = np.array(
            [[remap[v] for v in t] for t, ok in zip(self.faces, self.face_alive) if ok], dtype=np.int64
        ).reshape(-1, 3)
        return TriMesh(verts, tris)
