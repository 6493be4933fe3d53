"""
Point cloud and polygon mesh containers, file IO and cloud preprocessing.

Supported formats: XYZ text and PLY (ASCII, binary little/big endian) for
point clouds; OBJ and PLY for polygon meshes. Faces are written as polygons,
never fan-triangulated.
"""
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from .errors import EmptyCloud, MeshIOError, ParseError
from .geometry import as_points, bbox_diagonal, _frozen


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An (n, 3) array of points plus lazily computed spacing statistics."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(as_points(self.points)))

    def __len__(self):
        return len(self.points)

    def __repr__(self):
        return f"PointCloud({len(self)} points, avg_spacing={self.avg_spacing:.4g})"

    @cached_property
    def kdtree(self):
        return cKDTree(self.points)

    @cached_property
    def avg_spacing(self):
        """Median distance to the nearest distinct neighbor."""
        if len(self.points) < 2:
            return 0.0
        d, _ = self.kdtree.query(self.points, k=2)
        d = d[:, 1]
        d = d[d > 0]
        if len(d) == 0:
            return 0.0
        return float(np.median(d))

    @cached_property
    def bbox(self):
        return self.points.min(axis=0), self.points.max(axis=0)

    @property
    def diagonal(self):
        return bbox_diagonal(self.points)

    def subset(self, index):
        return PointCloud(self.points[np.asarray(index)])


@dataclass(frozen=True, eq=False)
class PolyMesh:
    """Indexed polygon mesh; every face is a planar vertex ring.

    ``plane_ids`` names the detected plane each face lies on (``-1`` if
    unknown) and ``candidate`` flags faces whose point coverage exceeded the
    candidate threshold.
    """

    vertices: np.ndarray
    faces: tuple
    plane_ids: tuple = None
    candidate: tuple = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "vertices", _frozen(v))
        faces = tuple(tuple(int(i) for i in f) for f in self.faces)
        for f in faces:
            if len(f) < 3:
                raise ValueError("mesh faces need at least 3 vertices")
            if min(f) < 0 or max(f) >= len(v):
                raise ValueError("face index out of range")
        object.__setattr__(self, "faces", faces)
        ids = (-1,) * len(faces) if self.plane_ids is None else tuple(int(i) for i in self.plane_ids)
        if len(ids) != len(faces):
            raise ValueError("plane_ids must match faces")
        object.__setattr__(self, "plane_ids", ids)
        if self.candidate is not None:
            object.__setattr__(self, "candidate", tuple(bool(c) for c in self.candidate))

    def __repr__(self):
        return f"PolyMesh({len(self.vertices)} vertices, {len(self.faces)} faces)"

    def face_normal_areas(self):
        """Newell area vectors (normal * area) per face."""
        out = np.zeros((len(self.faces), 3))
        for k, f in enumerate(self.faces):
            v = self.vertices[list(f)]
            out[k] = 0.5 * np.cross(v, np.roll(v, -1, axis=0)).sum(axis=0)
        return out

    def face_areas(self):
        return np.linalg.norm(self.face_normal_areas(), axis=1)

    def directed_edges(self):
        return [(f[k], f[(k + 1) % len(f)]) for f in self.faces for k in range(len(f))]

    def is_watertight(self):
        """Every directed edge appears once and is matched by its reverse."""
        edges = self.directed_edges()
        es = set(edges)
        return len(es) == len(edges) and all((b, a) in es for a, b in edges)

    def euler_characteristic(self):
        used = {i for f in self.faces for i in f}
        undirected = {(min(a, b), max(a, b)) for a, b in self.directed_edges()}
        return len(used) - len(undirected) + len(self.faces)

    def volume(self):
        total = 0.0
        for f in self.faces:
            v = self.vertices[list(f)]
            a, b, c = v[0], v[1:-1], v[2:]
            total += float(np.sum(np.cross(b, c) @ a)) / 6.0
        return total


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(data, path):
    if not data.startswith(b"ply"):
        raise ParseError("missing 'ply' magic", path=path, line=1)
    end = data.find(b"end_header")
    if end < 0:
        raise ParseError("missing end_header", path=path)
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    fmt = None
    elements = []
    for lineno, raw in enumerate(data[:end].decode("ascii", "replace").splitlines(), start=1):
        tok = raw.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise ParseError(f"bad element line {raw!r}", path=path, line=lineno)
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before element", path=path, line=lineno)
            if tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise ParseError(f"bad list property {raw!r}", path=path, line=lineno)
                elements[-1]["props"].append((tok[4], "list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            else:
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise ParseError(f"bad property {raw!r}", path=path, line=lineno)
                elements[-1]["props"].append((tok[2], "scalar", _PLY_TYPES[tok[1]], None))
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}", path=path)
    header_lines = data[:body_start].count(b"\n")
    return fmt, elements, body_start, header_lines


def _read_ply_ascii(data, elements, body_start, header_lines, path):
    lines = data[body_start:].decode("ascii", "replace").splitlines()
    pos = 0
    out = {}
    for el in elements:
        rows = []
        for _ in range(el["count"]):
            while pos < len(lines) and not lines[pos].strip():
                pos += 1
            if pos >= len(lines):
                raise ParseError(f"unexpected end of file in element {el['name']!r}", path=path,
                                 line=header_lines + pos + 1)
            tok = lines[pos].split()
            lineno = header_lines + pos + 1
            pos += 1
            row = {}
            t = 0
            try:
                for name, kind, dtype, itype in el["props"]:
                    if kind == "scalar":
                        row[name] = float(tok[t]) if dtype.startswith("f") else int(tok[t])
                        t += 1
                    else:
                        cnt = int(tok[t])
                        row[name] = [int(x) if itype[0] in "iu" else float(x) for x in tok[t + 1:t + 1 + cnt]]
                        if len(row[name]) != cnt:
                            raise IndexError
                        t += 1 + cnt
            except (IndexError, ValueError) as exc:
                raise ParseError(f"malformed {el['name']} record", path=path, line=lineno) from exc
            row["_line"] = lineno
            rows.append(row)
        out[el["name"]] = rows
    return out


def _read_ply_binary(data, elements, body_start, endian, path):
    pos = body_start
    out = {}
    for el in elements:
        props = el["props"]
        if all(kind == "scalar" for _, kind, _, _ in props):
            dtype = np.dtype([(name, endian + dt) for name, _, dt, _ in props])
            nbytes = dtype.itemsize * el["count"]
            if pos + nbytes > len(data):
                raise ParseError(f"truncated element {el['name']!r}", path=path, offset=pos)
            arr = np.frombuffer(data, dtype=dtype, count=el["count"], offset=pos)
            out[el["name"]] = arr
            pos += nbytes
            continue
        rows = []
        for _ in range(el["count"]):
            row = {}
            for name, kind, dt, itype in props:
                size = np.dtype(dt).itemsize
                if pos + size > len(data):
                    raise ParseError(f"truncated element {el['name']!r}", path=path, offset=pos)
                val = np.frombuffer(data, dtype=endian + dt, count=1, offset=pos)[0]
                pos += size
                if kind == "scalar":
                    row[name] = val.item()
                else:
                    cnt = int(val)
                    isz = np.dtype(itype).itemsize
                    if pos + isz * cnt > len(data):
                        raise ParseError(f"truncated list in {el['name']!r}", path=path, offset=pos)
                    row[name] = np.frombuffer(data, dtype=endian + itype, count=cnt, offset=pos).tolist()
                    pos += isz * cnt
            rows.append(row)
        out[el["name"]] = rows
    return out


def read_ply(path):
    """Parse a PLY file into ``{element name: rows}``.

    Scalar-only binary elements come back as structured numpy arrays, all
    other elements as lists of dicts.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(str(exc), path=path) from exc
    fmt, elements, body_start, header_lines = _parse_ply_header(data, path)
    if fmt == "ascii":
        return _read_ply_ascii(data, elements, body_start, header_lines, path)
    return _read_ply_binary(data, elements, body_start, "<" if fmt == "binary_little_endian" else ">", path)


def _column(rows, name):
    if isinstance(rows, np.ndarray):
        return np.asarray(rows[name], dtype=float)
    return np.array([r[name] for r in rows], dtype=float)


def _ply_points(path):
    elements = read_ply(path)
    rows = elements.get("vertex")
    if rows is None:
        raise ParseError("no 'vertex' element", path=path)
    names = rows.dtype.names if isinstance(rows, np.ndarray) else (rows[0].keys() if rows else ("x", "y", "z"))
    for axis in "xyz":
        if axis not in names:
            raise ParseError(f"vertex element lacks property {axis!r}", path=path)
    pts = np.stack([_column(rows, a) for a in "xyz"], axis=1) if len(rows) else np.zeros((0, 3))
    bad = ~np.all(np.isfinite(pts), axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        line = rows[k]["_line"] if isinstance(rows, list) else None
        raise ParseError(f"non-finite coordinate in vertex {k}", path=path, line=line)
    return pts, elements


def _xyz_points(path):
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(str(exc), path=path) from exc
    pts = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) < 3:
            raise ParseError("expected 'x y z'", path=path, line=lineno)
        try:
            xyz = [float(t) for t in tok[:3]]
        except ValueError as exc:
            raise ParseError(f"bad number in {raw!r}", path=path, line=lineno) from exc
        if not all(math.isfinite(c) for c in xyz):
            raise ParseError("non-finite coordinate", path=path, line=lineno)
        pts.append(xyz)
    return np.array(pts, dtype=float).reshape(-1, 3)


def _format_of(path, fmt):
    fmt = fmt or Path(path).suffix.lstrip(".").lower()
    return fmt


def load_cloud(path, fmt=None):
    """Read an XYZ or PLY point cloud; exact duplicate points are dropped."""
    fmt = _format_of(path, fmt)
    if fmt in ("xyz", "txt", "pts"):
        pts = _xyz_points(path)
    elif fmt == "ply":
        pts, _ = _ply_points(path)
    else:
        raise ParseError(f"unknown point cloud format {fmt!r}", path=path)
    if len(pts) == 0:
        raise EmptyCloud("no points", path=path)
    _, first = np.unique(pts, axis=0, return_index=True)
    return PointCloud(pts[np.sort(first)])


def _ply_header(fmt, elements):
    lines = ["ply", f"format {fmt} 1.0"]
    for name, count, props in elements:
        lines.append(f"element {name} {count}")
        lines.extend(f"property {p}" for p in props)
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def save_cloud(cloud, path, binary=True):
    """Write points as XYZ text or PLY (binary little endian by default)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)
    path = Path(path)
    try:
        if path.suffix.lower() == ".ply":
            fmt = "binary_little_endian" if binary else "ascii"
            head = _ply_header(fmt, [("vertex", len(pts), ["double x", "double y", "double z"])])
            if binary:
                path.write_bytes(head + pts.astype("<f8").tobytes())
            else:
                body = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist())
                path.write_bytes(head + body.encode("ascii"))
        else:
            path.write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()), newline="\n")
    except OSError as exc:
        raise MeshIOError(str(exc)) from exc


def save_mesh(mesh, path, fmt=None, binary=True):
    """Write a polygon mesh as OBJ (``v``/``f`` records, 1-based) or PLY."""
    fmt = _format_of(path, fmt)
    path = Path(path)
    try:
        if fmt == "obj":
            out = [f"v {x!r} {y!r} {z!r}\n" for x, y, z in mesh.vertices.tolist()]
            out += ["f " + " ".join(str(i + 1) for i in f) + "\n" for f in mesh.faces]
            with open(path, "w", newline="\n") as fh:
                fh.write("".join(out))
        elif fmt == "ply":
            face_props = ["list uchar int vertex_indices", "int plane_id"]
            if mesh.candidate is not None:
                face_props.append("uchar candidate")
            elements = [
                ("vertex", len(mesh.vertices), ["double x", "double y", "double z"]),
                ("face", len(mesh.faces), face_props),
            ]
            if binary:
                chunks = [_ply_header("binary_little_endian", elements), mesh.vertices.astype("<f8").tobytes()]
                for k, f in enumerate(mesh.faces):
                    chunks.append(struct.pack(f"<B{len(f)}ii", len(f), *f, mesh.plane_ids[k]))
                    if mesh.candidate is not None:
                        chunks.append(struct.pack("<B", int(mesh.candidate[k])))
                path.write_bytes(b"".join(chunks))
            else:
                lines = [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
                for k, f in enumerate(mesh.faces):
                    rec = [str(len(f)), *map(str, f), str(mesh.plane_ids[k])]
                    if mesh.candidate is not None:
                        rec.append(str(int(mesh.candidate[k])))
                    lines.append(" ".join(rec))
                path.write_bytes(_ply_header("ascii", elements) + ("\n".join(lines) + "\n").encode("ascii"))
        else:
            raise MeshIOError(f"unknown mesh format {fmt!r}")
    except OSError as exc:
        raise MeshIOError(str(exc)) from exc


def load_mesh(path, fmt=None):
    """Read an OBJ or PLY polygon mesh written by :func:`save_mesh` (or similar)."""
    fmt = _format_of(path, fmt)
    if fmt == "obj":
        verts, faces = [], []
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ParseError(str(exc), path=path) from exc
        for lineno, raw in enumerate(text.splitlines(), start=1):
            tok = raw.split("#", 1)[0].split()
            if not tok:
                continue
            try:
                if tok[0] == "v":
                    verts.append([float(t) for t in tok[1:4]])
                elif tok[0] == "f":
                    idx = [int(t.split("/")[0]) for t in tok[1:]]
                    faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
            except ValueError as exc:
                raise ParseError(f"bad record {raw!r}", path=path, line=lineno) from exc
        return PolyMesh(np.array(verts).reshape(-1, 3), faces)
    if fmt == "ply":
        pts, elements = _ply_points(path)
        rows = elements.get("face", [])
        faces = [r.get("vertex_indices", r.get("vertex_index")) for r in rows]
        ids = [r.get("plane_id", -1) for r in rows]
        cand = [bool(r["candidate"]) for r in rows] if rows and "candidate" in rows[0] else None
        return PolyMesh(pts, faces, ids, cand)
    raise ParseError(f"unknown mesh format {fmt!r}", path=path)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def poisson_resample(cloud, radius, seed=0):
    """Greedy dart-throwing subsample with minimum pairwise distance ``radius``.

    Points are visited in a seeded random order; a point is kept unless it
    lies within ``radius`` of an already kept point. Kept points
    are returned in their original order.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = cloud.points
    n = len(pts)
    order = np.random.default_rng(seed).permutation(n)
    tree = cloud.kdtree
    blocked = np.zeros(n, dtype=bool)
    kept = []
    for i in order:
        if blocked[i]:
            continue
        kept.append(i)
        nbrs = tree.query_ball_point(pts[i], radius)
        blocked[nbrs] = True
    return PointCloud(pts[np.sort(np.asarray(kept, dtype=int))])


def knn_indices(points, k):
    """k nearest neighbors of every point (self excluded).

    Ties in distance are broken by the lower point index, which makes the
    neighbor sets reproducible on regular grids.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < number of points")
    tree = cKDTree(pts)
    d, _ = tree.query(pts, k=k + 1)
    radius = d[:, -1] * (1.0 + 1e-9) + 1e-300
    cands = tree.query_ball_point(pts, radius)
    out = np.empty((n, k), dtype=int)
    for i, c in enumerate(cands):
        c = np.asarray(c, dtype=int)
        c = c[c != i]
        d2 = np.sum((pts[c] - pts[i]) ** 2, axis=1)
        out[i] = c[np.lexsort((c, d2))[:k]]
    return out


def outlier_mask(points, k):
    """True for points that are not a k-nearest neighbor of any of their own k neighbors."""
    nbrs = knn_indices(points, k)
    n = len(nbrs)
    rows = np.repeat(np.arange(n), k)
    m = csr_matrix((np.ones(n * k, dtype=np.int8), (rows, nbrs.ravel())), shape=(n, n))
    mutual = m.multiply(m.T).tocsr()
    return np.diff(mutual.indptr) == 0


def remove_outliers(cloud, k=16):
    """Single pass of mutual-neighbor outlier removal."""
    if k < 1 or len(cloud) <= k:
        raise ValueError("need k >= 1 and more than k points")
    return cloud.subset(np.flatnonzero(~outlier_mask(cloud.points, k)))
