import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cranioforge.errors import InvalidLoop, NotBoundaryEdge, NothingRemoved, SharedVertex
from cranioforge.mesh import TriMesh, boundary_loops, validate
from cranioforge.primitives import icosphere, planar_grid
from cranioforge.repair import (
    MAX_DP_LOOP,
    bridge,
    fill_all_holes,
    fill_hole,
    min_area_triangulation,
    refill_region,
    remove_region,
)
from oracles import edge_incidence, shoelace


def without(mesh, faces):
    keep = np.setdiff1d(np.arange(mesh.n_triangles), faces)
    return TriMesh(mesh.vertices, mesh.triangles[keep])


def faces_in_box(mesh, lo, hi):
    c = mesh.corners().mean(axis=1)
    return np.flatnonzero(np.all((c >= lo) & (c <= hi), axis=1))


def boundary_edge_count(mesh):
    return sum(1 for c in edge_incidence(mesh.triangles).values() if c == 1)


def disjoint_faces(mesh, k, seed=0):
    """``k`` triangles with no shared vertex and no shared neighbour vertex."""
    rng = np.random.default_rng(seed)
    used, picked = set(), []
    for f in rng.permutation(mesh.n_triangles):
        tri = set(mesh.triangles[f].tolist())
        ring = {v for t in mesh.triangles if tri & set(t.tolist()) for v in t.tolist()}
        if ring & used:
            continue
        picked.append(int(f))
        used |= ring
        if len(picked) == k:
            return picked
    raise AssertionError


def polygon_triangulations(n):
    """Every triangulation of a convex n-gon, by brute recursion on edge (0, n-1)."""
    def rec(i, j):
        if j - i < 2:
            return [[]]
        out = []
        for k in range(i + 1, j):
            for left in rec(i, k):
                for right in rec(k, j):
                    out.append(left + right + [(i, k, j)])
        return out
    return rec(0, n - 1)


def untouched_vertices_identical(before, after):
    n = before.n_vertices
    np.testing.assert_array_equal(after.vertices[:n], before.vertices)


# --- min-area DP ------------------------------------------------------------

@settings(max_examples=60)
@given(st.integers(3, 8), st.integers(0, 2**32 - 1))
def test_min_area_matches_enumeration(n, seed):
    pts = np.random.default_rng(seed).normal(size=(n, 3))

    def area(t):
        return sum(0.5 * np.linalg.norm(np.cross(pts[k] - pts[i], pts[j] - pts[i])) for i, k, j in t)

    best = min(area(t) for t in polygon_triangulations(n))
    got = min_area_triangulation(pts)
    assert len(got) == n - 2
    assert area(got) == pytest.approx(best, rel=1e-12)


def test_forbidden_diagonals_respected():
    pts = np.array([[np.cos(a), np.sin(a), 0] for a in np.linspace(0, 2 * np.pi, 6, endpoint=False)])
    tris = min_area_triangulation(pts, forbidden=lambda i, j: i == 0)
    edges = {(min(a, b), max(a, b)) for t in tris for a, b in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2]))}
    assert not {(0, 2), (0, 3), (0, 4)} & edges
    assert min_area_triangulation(pts, forbidden=lambda i, j: True) is None


# --- fill_hole --------------------------------------------------------------

def test_triangle_hole_one_triangle():
    sphere = icosphere(1, 2)
    holed = without(sphere, [7])
    (loop,) = boundary_loops(holed)
    out = fill_hole(holed, loop)
    assert out.n_triangles == sphere.n_triangles
    r = validate(out)
    assert r.is_watertight and r.euler_characteristic == 2
    untouched_vertices_identical(holed, out)


def test_planar_hexagon_area():
    ang = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    rim = np.stack([3 * np.cos(ang), 2 * np.sin(ang), np.zeros(6)], axis=1)
    outer = rim * 2
    verts = np.concatenate([rim, outer])
    # a ring of quads around a hexagonal hole, wound counter-clockwise in +z
    tris = []
    for i in range(6):
        j = (i + 1) % 6
        tris += [(i, 6 + i, 6 + j), (i, 6 + j, j)]
    ring = TriMesh(verts, tris)
    loops = boundary_loops(ring)
    inner = min(loops, key=lambda l: l.perimeter)
    out = fill_hole(ring, inner)
    new = out.triangles[ring.n_triangles:]
    assert len(new) == 4
    area = sum(0.5 * np.linalg.norm(np.cross(verts[b] - verts[a], verts[c] - verts[a])) for a, b, c in new)
    assert area == pytest.approx(shoelace(rim[:, :2]), abs=1e-9)
    assert validate(out).orientation_consistent


def test_stale_loop_rejected():
    holed = without(icosphere(1, 2), [3])
    (loop,) = boundary_loops(holed)
    filled = fill_hole(holed, loop)
    with pytest.raises(InvalidLoop):
        fill_hole(filled, loop)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_fill_hole_bookkeeping(seed, k):
    sphere = icosphere(5, 2)
    holed = without(sphere, disjoint_faces(sphere, k, seed))
    loop = boundary_loops(holed)[0]
    before = boundary_edge_count(holed)
    out = fill_hole(holed, loop)
    assert boundary_edge_count(out) == before - len(loop)
    assert max(edge_incidence(out.triangles).values()) == 2
    assert validate(out).orientation_consistent


def test_long_loop_falls_back_to_fan(caplog):
    n = MAX_DP_LOOP + 20
    ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
    rim = np.stack([np.cos(ang), np.sin(ang), np.zeros(n)], axis=1) * 10
    apex = [[0, 0, -5]]
    cone = TriMesh(np.concatenate([rim, apex]), [(n, (i + 1) % n, i) for i in range(n)])
    (loop,) = boundary_loops(cone)
    out = fill_hole(cone, loop)
    assert "fan" in caplog.text
    assert validate(out).is_watertight


# --- fill_all_holes ---------------------------------------------------------

def test_fill_all_closed_unchanged():
    s = icosphere(1, 2)
    out, count = fill_all_holes(s)
    assert count == 0 and out == s


def test_fill_all_ten_holes():
    sphere = icosphere(10, 3)
    holed = without(sphere, disjoint_faces(sphere, 10))
    assert validate(holed).boundary_loop_count == 10
    out, count = fill_all_holes(holed)
    assert count == 10
    r = validate(out)
    assert r.is_watertight and r.euler_characteristic == 2
    untouched_vertices_identical(holed, out)


def test_fill_all_perimeter_limit():
    sphere = icosphere(10, 3)
    holed = without(sphere, disjoint_faces(sphere, 3))
    smallest = min(l.perimeter for l in boundary_loops(holed))
    out, count = fill_all_holes(holed, max_perimeter=smallest * 0.99)
    assert count == 0 and out == holed
    _, count = fill_all_holes(holed, max_perimeter=smallest)
    assert count >= 1


# --- bridge -----------------------------------------------------------------

def two_hole_grid():
    g = planar_grid(9, 1.0)
    # two quads of surface between the holes so the strip adds no existing edge
    holes = np.concatenate([faces_in_box(g, (1, 2, -1), (3, 5, 1)), faces_in_box(g, (5, 2, -1), (7, 5, 1))])
    return without(g, holes)


def idx(i, j, n=9):
    return i * n + j


def test_bridge_merges_two_loops():
    g = two_hole_grid()
    assert len(boundary_loops(g)) == 3
    before = boundary_edge_count(g)
    # right edge of the first hole and left edge of the second, both along y
    out = bridge(g, (idx(3, 3), idx(3, 4)), (idx(5, 3), idx(5, 4)))
    assert out.n_triangles == g.n_triangles + 2
    assert len(boundary_loops(out)) == 2
    assert boundary_edge_count(out) == before
    r = validate(out)
    assert r.orientation_consistent and r.non_manifold_edge_count == 0
    untouched_vertices_identical(g, out)


def test_bridge_splits_one_loop():
    g = planar_grid(9, 1.0)
    g = without(g, faces_in_box(g, (1, 2, -1), (6, 5, 1)))
    assert len(boundary_loops(g)) == 2
    before = boundary_edge_count(g)
    out = bridge(g, (idx(1, 3), idx(1, 4)), (idx(6, 3), idx(6, 4)))
    assert len(boundary_loops(out)) == 3
    assert boundary_edge_count(out) == before
    assert validate(out).orientation_consistent


def test_bridge_errors():
    g = two_hole_grid()
    with pytest.raises(NotBoundaryEdge):
        bridge(g, (idx(3, 3), idx(3, 4)), (idx(4, 6), idx(4, 7)))
    with pytest.raises(SharedVertex):
        bridge(g, (idx(3, 3), idx(3, 4)), (idx(3, 4), idx(3, 5)))


# --- remove / refill --------------------------------------------------------

def test_remove_nothing():
    with pytest.raises(NothingRemoved):
        remove_region(icosphere(10, 2), (100, 0, 0), 1e-3)


def test_remove_everything():
    assert remove_region(icosphere(10, 2), (0, 0, 0), 25).n_triangles == 0


def test_remove_north_pole_matches_scan():
    s = icosphere(10, 3)
    out = remove_region(s, (0, 0, 10), 3.0)
    expected = [
        tuple(t) for t in s.triangles.tolist()
        if math.dist(np.mean([s.vertices[v] for v in t], axis=0), (0, 0, 10)) > 3.0
    ]
    assert [tuple(t) for t in out.triangles.tolist()] == expected
    assert len(boundary_loops(out)) == 1


def test_refill_jagged_defect():
    s = icosphere(10, 3)
    rng = np.random.default_rng(5)
    near = np.flatnonzero(np.linalg.norm(s.vertices - (10, 0, 0), axis=1) < 2.5)
    v = s.vertices.copy()
    v[near] += rng.normal(scale=1.5, size=(len(near), 3))
    damaged = TriMesh(v, s.triangles)
    out = refill_region(damaged, (10, 0, 0), 4.0)
    r = validate(out)
    assert r.is_watertight and r.euler_characteristic == 2
    c = out.corners().mean(axis=1)
    kept = np.linalg.norm(damaged.corners().mean(axis=1) - (10, 0, 0), axis=1) > 4.0
    assert np.count_nonzero(np.linalg.norm(c - (10, 0, 0), axis=1) > 4.0) >= kept.sum()


def test_refill_pristine_region():
    s = icosphere(10, 3)
    out = refill_region(s, (0, 10, 0), 3.0)
    removed = np.count_nonzero(np.linalg.norm(s.corners().mean(axis=1) - (0, 10, 0), axis=1) <= 3.0)
    loop = boundary_loops(remove_region(s, (0, 10, 0), 3.0))[0]
    assert out.n_triangles == s.n_triangles - removed + len(loop) - 2
    assert validate(out).is_watertight


def test_refill_propagates_nothing_removed():
    with pytest.raises(NothingRemoved):
        refill_region(icosphere(10, 2), (50, 0, 0), 1.0)
