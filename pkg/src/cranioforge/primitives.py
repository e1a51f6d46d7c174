"""Closed reference shapes used by tests, demos and phantoms."""
import numpy as np

from .mesh import TriMesh, concatenate


def icosahedron():
    phi = (1 + 5 ** 0.5) / 2
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)):
    """Geodesic sphere with ``20 * 4**subdivisions`` triangles, outward wound."""
    v, f = icosahedron()
    verts = [tuple(p) for p in v]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                p = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2
                verts.append(tuple(p / np.linalg.norm(p)))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = np.array(new_faces)
    points = np.array(verts) * float(radius) + np.asarray(center, dtype=float)
    return TriMesh(points, f)


def box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)):
    """Axis-aligned box, 8 vertices and 12 outward triangles."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    corners = np.array([[(hi if (i >> k) & 1 else lo)[k] for k in range(3)] for i in range(8)])
    faces = [
        (0, 2, 1), (1, 2, 3),  # z = lo
        (4, 5, 6), (5, 7, 6),  # z = hi
        (0, 1, 4), (1, 5, 4),  # y = lo
        (2, 6, 3), (3, 6, 7),  # y = hi
        (0, 4, 2), (2, 4, 6),  # x = lo
        (1, 3, 5), (3, 7, 5),  # x = hi
    ]
    return TriMesh(corners, faces)


def torus(major=3.0, minor=1.0, n_major=24, n_minor=12):
    """Genus-1 closed surface around the z axis."""
    u = np.arange(n_major) * 2 * np.pi / n_major
    w = np.arange(n_minor) * 2 * np.pi / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    r = major + minor * np.cos(ww)
    pts = np.stack([r * np.cos(uu), r * np.sin(uu), minor * np.sin(ww)], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(pts, faces)


def planar_grid(n=5, spacing=1.0):
    """Flat ``n x n`` vertex grid in z = 0 with an open square boundary."""
    xs = np.arange(n) * float(spacing)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel(), np.zeros(n * n)], axis=1)
    faces = []
    for i in range(n - 1):
        for j in range(n - 1):
            a, b, c, d = i * n + j, (i + 1) * n + j, (i + 1) * n + j + 1, i * n + j + 1
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(pts, faces)


def reversed_mesh(mesh):
    """Same surface with every triangle's winding flipped."""
    return TriMesh(mesh.vertices, mesh.triangles[:, ::-1])


def hollow_sphere(outer=20.0, inner=18.0, subdivisions=5, center=(0.0, 0.0, 0.0)):
    """Closed spherical shell: outward outer sphere plus inward-facing inner one."""
    return concatenate(
        icosphere(outer, subdivisions, center),
        reversed_mesh(icosphere(inner, subdivisions, center)),
    )
