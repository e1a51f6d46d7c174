"""STL (binary and ASCII) and Wavefront OBJ reading and writing."""
from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MalformedOBJ, MalformedSTL, NonFiniteCoordinate
from .mesh import DEFAULT_WELD_TOLERANCE, TriMesh, weld_vertices

HEADER = f"cranioforge {__version__} binary STL".encode("ascii").ljust(80, b" ")

_RECORD = np.dtype([
    ("normal", "<f4", (3,)),
    ("v", "<f4", (3, 3)),
    ("attr", "<u2"),
])


def _unit_normals(soup):
    n = np.cross(soup[:, 1] - soup[:, 0], soup[:, 2] - soup[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)


def _looks_ascii(data):
    if not data[:5].lower() == b"solid":
        return False
    # some binary exporters also start with "solid"; trust the size field then
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        if 84 + 50 * count == len(data):
            return False
    return True


def parse_binary_stl(data):
    if len(data) < 84:
        raise MalformedSTL(f"binary STL shorter than its 84-byte header ({len(data)} bytes)")
    (count,) = struct.unpack_from("<I", data, 80)
    need = 84 + 50 * count
    if len(data) < need:
        raise MalformedSTL(f"header declares {count} facets ({need} bytes) but file has {len(data)} bytes")
    if len(data) > need:
        raise MalformedSTL(f"{len(data) - need} trailing bytes after {count} facets")
    records = np.frombuffer(data, dtype=_RECORD, count=count, offset=84)
    soup = records["v"].astype(np.float64)
    if not np.all(np.isfinite(soup)):
        raise NonFiniteCoordinate("binary STL contains NaN or infinite coordinates")
    return soup


_TOKEN = re.compile(rb"\S+")


def parse_ascii_stl(data):
    tokens = _TOKEN.findall(data)
    pos = 0

    def expect(word):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos].lower() != word:
            got = tokens[pos].decode(errors="replace") if pos < len(tokens) else "end of file"
            raise MalformedSTL(f"expected {word.decode()!r}, got {got!r}")
        pos += 1

    def number():
        nonlocal pos
        if pos >= len(tokens):
            raise MalformedSTL("unexpected end of file inside a facet")
        try:
            value = float(tokens[pos])
        except ValueError:
            raise MalformedSTL(f"invalid number {tokens[pos]!r}") from None
        pos += 1
        return value

    expect(b"solid")
    # optional solid name: skip until first 'facet' or 'endsolid'
    while pos < len(tokens) and tokens[pos].lower() not in (b"facet", b"endsolid"):
        pos += 1
    facets = []
    while pos < len(tokens) and tokens[pos].lower() == b"facet":
        pos += 1
        expect(b"normal")
        for _ in range(3):
            number()
        expect(b"outer")
        expect(b"loop")
        tri = []
        for _ in range(3):
            expect(b"vertex")
            tri.append((number(), number(), number()))
        expect(b"endloop")
        expect(b"endfacet")
        facets.append(tri)
    expect(b"endsolid")
    soup = np.array(facets, dtype=np.float64).reshape(-1, 3, 3)
    if not np.all(np.isfinite(soup)):
        raise NonFiniteCoordinate("ASCII STL contains NaN or infinite coordinates")
    return soup


def read_stl(path):
    """Return the triangle soup (m, 3, 3) of an ASCII or binary STL file."""
    data = Path(path).read_bytes()
    if _looks_ascii(data):
        return parse_ascii_stl(data)
    return parse_binary_stl(data)


def read_stl_mesh(path, tolerance=DEFAULT_WELD_TOLERANCE):
    return weld_vertices(read_stl(path), tolerance)


def stl_bytes(mesh_or_soup, fmt="binary"):
    soup = mesh_or_soup.corners() if isinstance(mesh_or_soup, TriMesh) else np.asarray(mesh_or_soup, float)
    soup = soup.reshape(-1, 3, 3)
    if not np.all(np.isfinite(soup)):
        raise NonFiniteCoordinate("cannot write NaN or infinite coordinates")
    soup32 = soup.astype("<f4")
    normals = _unit_normals(soup32.astype(np.float64)).astype("<f4")
    if fmt == "binary":
        records = np.zeros(len(soup32), dtype=_RECORD)
        records["normal"] = normals
        records["v"] = soup32
        return HEADER + struct.pack("<I", len(soup32)) + records.tobytes()
    if fmt != "ascii":
        raise ValueError(f"STL format must be 'ascii' or 'binary', got {fmt!r}")
    lines = ["solid cranioforge"]
    for n, tri in zip(normals.astype(np.float64), soup):
        lines.append(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}")
        lines.append("    outer loop")
        for p in tri:
            lines.append(f"      vertex {p[0]:.9e} {p[1]:.9e} {p[2]:.9e}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append("endsolid cranioforge")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_stl(mesh, path, fmt="binary"):
    """Write ``mesh`` (or a soup) as STL; facet normals follow the winding."""
    Path(path).write_bytes(stl_bytes(mesh, fmt))


def read_obj(path):
    """Read ``v`` and ``f`` records; polygons are fan-triangulated.

    Face tokens may be ``i``, ``i/t``, ``i//n`` or ``i/t/n``; negative indices
    count from the end. Everything else is ignored.
    """
    verts, tris = [], []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise MalformedOBJ(f"line {lineno}: vertex needs 3 coordinates")
            try:
                p = [float(x) for x in parts[1:4]]
            except ValueError:
                raise MalformedOBJ(f"line {lineno}: bad vertex {line!r}") from None
            if not all(np.isfinite(p)):
                raise NonFiniteCoordinate(f"line {lineno}: non-finite vertex")
            verts.append(p)
        elif parts[0] == "f":
            if len(parts) < 4:
                raise MalformedOBJ(f"line {lineno}: face needs at least 3 vertices")
            idx = []
            for tok in parts[1:]:
                try:
                    i = int(tok.split("/")[0])
                except ValueError:
                    raise MalformedOBJ(f"line {lineno}: bad face index {tok!r}") from None
                i = i - 1 if i > 0 else len(verts) + i if i < 0 else -1
                if not 0 <= i < len(verts):
                    raise MalformedOBJ(f"line {lineno}: index {tok} out of range (have {len(verts)} vertices)")
                idx.append(i)
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    try:
        return TriMesh(np.array(verts, float).reshape(-1, 3), np.array(tris, np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise MalformedOBJ(str(exc)) from exc


def obj_text(mesh, precision=9):
    fmt = f"{{:.{precision}g}}"
    lines = [f"# cranioforge {__version__}"]
    for p in mesh.vertices:
        lines.append("v " + " ".join(fmt.format(c) for c in p))
    for a, b, c in mesh.triangles + 1:
        lines.append(f"f {a} {b} {c}")
    return "\n".join(lines) + "\n"


def write_obj(mesh, path, precision=9):
    """Write vertices and triangles only (no normals).

    ``precision`` is the number of significant digits; 17 makes the file a
    lossless checkpoint.
    """
    Path(path).write_text(obj_text(mesh, precision), encoding="utf-8")


def read_mesh(path):
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return read_obj(path)
    if path.suffix.lower() == ".stl":
        return read_stl_mesh(path)
    raise ValueError(f"unsupported mesh file extension: {path}")


def write_mesh(mesh, path, stl_format="binary", precision=17):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".obj":
        write_obj(mesh, path, precision)
    elif path.suffix.lower() == ".stl":
        write_stl(mesh, path, stl_format)
    else:
        raise ValueError(f"unsupported mesh file extension: {path}")
